#![no_main]

use libfuzzer_sys::fuzz_target;
use parafac2_mtl::cli::CliConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(Ok(c)) = std::str::from_utf8(data).map(CliConfig::from_json) {
        let _ = c.validate();
    }
});
