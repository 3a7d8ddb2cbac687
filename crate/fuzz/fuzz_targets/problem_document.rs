#![no_main]

use libfuzzer_sys::fuzz_target;

use loca::chain::{problem_from_document, problem_to_document};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok((problem, attachments)) = problem_from_document(text) {
        let mut with_refs = problem.clone();
        for (_, media_type) in &attachments {
            with_refs.attachments.push(loca::chain::Attachment {
                media_type: media_type.clone(),
                bytes: Vec::new(),
            });
        }
        let paths: Vec<String> = attachments.iter().map(|(p, _)| p.clone()).collect();
        let doc = problem_to_document(&with_refs, &paths);
        let (again, refs_again) = problem_from_document(&doc).expect("canonical form must reparse");
        assert_eq!(again, problem);
        assert_eq!(refs_again, attachments);
    }
});
