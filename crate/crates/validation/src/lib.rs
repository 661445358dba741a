//! Acceptance checks for `simplex-reduction`, run as the `acceptance` test
//! target. Each check runs a large ensemble and prints one `PASS`/`FAIL` line.
