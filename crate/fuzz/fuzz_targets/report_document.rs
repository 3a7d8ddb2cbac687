#![no_main]

use libfuzzer_sys::fuzz_target;

use loca::session::{report_from_document, report_to_document};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(report) = report_from_document(text) {
        // parsed reports always satisfy the aggregation laws
        let (overall, feedback) = loca::chain::aggregate_verdicts(&report.verdicts).unwrap();
        assert_eq!(report.overall, overall);
        assert_eq!(report.feedback_set, feedback);
        let doc = report_to_document(&report);
        let again = report_from_document(&doc).expect("canonical form must reparse");
        assert_eq!(again, report);
    }
});
