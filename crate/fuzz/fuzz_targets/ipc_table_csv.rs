#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| pscman_fuzz::ipc_table_csv(data));
