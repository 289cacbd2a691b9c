#![no_main]

use adaeq::diagnostics::RunRecord;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = RunRecord::read_rows(data) {
        assert!(rows.windows(2).all(|w| w[0].step < w[1].step));
        let rec = RunRecord { rows, ..Default::default() };
        let mut buf = Vec::new();
        rec.write_rows(&mut buf).unwrap();
        let again = RunRecord::read_rows(buf.as_slice()).unwrap();
        assert_eq!(again.len(), rec.rows.len());
    }
});
