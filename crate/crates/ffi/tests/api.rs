use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use stemma_ffi::*;

const TEI: &str = r##"<TEI><teiHeader><listWit>
<witness xml:id="A"/><witness xml:id="B"/><witness xml:id="C"/><witness xml:id="D"/><witness xml:id="E"/>
</listWit></teiHeader><text><body>
<app><lem wit="#A #B">x</lem><rdg wit="#C #D #E">y</rdg></app>
<app><lem wit="#A #B #C">p</lem><rdg wit="#D #E">q</rdg></app>
<app><lem wit="#A #C">s</lem><rdg wit="#B #D #E">t</rdg></app>
</body></text></TEI>"##;

unsafe fn take(s: *mut std::ffi::c_char) -> String {
    let out = CStr::from_ptr(s).to_str().unwrap().to_string();
    stemma_string_free(s);
    out
}

#[test]
fn tei_to_svg_through_handles() {
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(stemma_matrix_from_tei(TEI.as_ptr(), TEI.len(), ptr::null(), &mut m), StemmaStatus::Ok);
        assert_eq!(stemma_matrix_taxon_count(m), 5);
        assert_eq!(stemma_matrix_site_count(m), 3);

        let mut text = ptr::null_mut();
        assert_eq!(stemma_matrix_to_phylip(m, &mut text), StemmaStatus::Ok);
        assert!(take(text).starts_with(" 5 3\n"));

        let mut opts = stemma_search_options_default();
        opts.mode = StemmaSearchMode::Exhaustive;
        let mut forest = ptr::null_mut();
        let mut score = 0u32;
        assert_eq!(stemma_search(m, &opts, &mut forest, &mut score), StemmaStatus::Ok);
        assert_eq!(score, 4);
        let n = stemma_forest_len(forest);
        assert!(n >= 1);
        for i in 0..n {
            let mut s = 0;
            assert_eq!(stemma_fitch_score(forest, i, m, &mut s), StemmaStatus::Ok);
            assert_eq!(s, score);
        }
        let mut s = 0;
        assert_eq!(stemma_fitch_score(forest, n, m, &mut s), StemmaStatus::InvalidArgument);

        let mut cons = ptr::null_mut();
        assert_eq!(
            stemma_consensus(forest, StemmaConsensusMethod::Mre, false, &mut cons),
            StemmaStatus::Ok
        );
        assert_eq!(stemma_forest_len(cons), 1);
        let mut svg = ptr::null_mut();
        assert_eq!(
            stemma_forest_to_svg(cons, 0, StemmaLengthMode::Support, ptr::null(), &mut svg),
            StemmaStatus::Ok
        );
        assert!(take(svg).starts_with("<?xml"));
        assert_eq!(
            stemma_forest_to_svg(forest, 0, StemmaLengthMode::Changes, ptr::null(), &mut svg),
            StemmaStatus::Config
        );
        assert_eq!(
            stemma_forest_to_svg(forest, 0, StemmaLengthMode::Changes, m, &mut svg),
            StemmaStatus::Ok
        );
        stemma_string_free(svg);

        stemma_forest_free(cons);
        stemma_forest_free(forest);
        stemma_matrix_free(m);
    }
}

#[test]
fn matrix_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().to_str().unwrap()).unwrap();
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(stemma_matrix_from_tei(TEI.as_ptr(), TEI.len(), ptr::null(), &mut m), StemmaStatus::Ok);
        assert_eq!(stemma_matrix_write(m, path.as_ptr()), StemmaStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(stemma_matrix_read(path.as_ptr(), &mut back), StemmaStatus::Ok);
        let (mut a, mut b) = (ptr::null_mut(), ptr::null_mut());
        stemma_matrix_to_phylip(m, &mut a);
        stemma_matrix_to_phylip(back, &mut b);
        assert_eq!(take(a), take(b));
        stemma_matrix_free(m);
        stemma_matrix_free(back);

        let missing = CString::new(dir.path().join("nope").to_str().unwrap()).unwrap();
        assert_eq!(stemma_matrix_read(missing.as_ptr(), &mut back), StemmaStatus::Io);
    }
}

#[test]
fn errors_set_status_and_message() {
    unsafe {
        let bad = "<TEI><app>";
        let mut m = ptr::null_mut();
        assert_eq!(stemma_matrix_from_tei(bad.as_ptr(), bad.len(), ptr::null(), &mut m), StemmaStatus::Xml);
        let msg = CStr::from_ptr(stemma_last_error()).to_str().unwrap();
        assert!(msg.contains("line"), "{msg}");
        assert!(m.is_null());

        let mut f = ptr::null_mut();
        let bad = CString::new("(A,(B,C);").unwrap();
        assert_eq!(stemma_forest_parse(bad.as_ptr(), &mut f), StemmaStatus::Newick);
        assert_eq!(stemma_forest_to_newick(ptr::null(), ptr::null_mut()), StemmaStatus::InvalidArgument);
        assert!(!CStr::from_ptr(stemma_version()).to_bytes().is_empty());
    }
}

#[test]
fn newick_round_trip() {
    unsafe {
        let mut f = ptr::null_mut();
        let text = CString::new("(B,(A,C),(D,E));\n((A,B),(C,D));").unwrap();
        assert_eq!(stemma_forest_parse(text.as_ptr(), &mut f), StemmaStatus::Ok);
        assert_eq!(stemma_forest_len(f), 2);
        let mut out = ptr::null_mut();
        assert_eq!(stemma_forest_to_newick(f, &mut out), StemmaStatus::Ok);
        assert_eq!(take(out), "((A,C),(B,(D,E)));\n((A,B),(C,D));\n");
        stemma_forest_free(f);
    }
}

#[test]
fn run_from_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.xml");
    std::fs::write(&input, TEI).unwrap();
    let manifest = dir.path().join("manifest.txt");
    std::fs::write(&manifest, format!("input = {}\nmode = exhaustive\n", input.display())).unwrap();
    let out = dir.path().join("out");
    let m = CString::new(manifest.to_str().unwrap()).unwrap();
    let o = CString::new(out.to_str().unwrap()).unwrap();
    unsafe {
        assert_eq!(stemma_run_manifest(m.as_ptr(), o.as_ptr(), false), StemmaStatus::Ok);
    }
    assert!(out.join("tree.svg").is_file());
    assert!(out.join("manifest.txt").is_file());
}

#[test]
fn header_is_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include").join("stemma.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in ["stemma_matrix_from_tei", "stemma_search", "stemma_consensus", "stemma_last_error"] {
        assert!(text.contains(f), "{f} missing from header");
    }
    let Ok(out) = Command::new("cc").args(["-fsyntax-only", "-x", "c"]).arg(&header).output() else {
        eprintln!("no C compiler, syntax check skipped");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
