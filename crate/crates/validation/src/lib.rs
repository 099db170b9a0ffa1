//! Holds the `acceptance` test target, which prints one PASS/FAIL line per
//! end-to-end check and exits nonzero if any check fails.
