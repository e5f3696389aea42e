use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use kwseq::evalcli::{compute_eer, gen_corpus, train_system, Decoder, ExperimentConfig, PostMode, SynthConfig, System};
use kwseq_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(kws_last_error()) }.to_string_lossy().into_owned()
}

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn tiny_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.synth = SynthConfig { train_utterances: 120, dev_utterances: 30, test_utterances: 10, ..SynthConfig::default() };
    cfg.train.model.hidden = vec![16];
    cfg.train.ce_epochs = 1;
    cfg.train.epochs = 1;
    cfg
}

/// Writes a tiny corpus and trained model into `dir`.
fn fixture(dir: &Path) -> (kwseq::evalcli::Corpus, System, kwseq::acoustic::FrameClassifier) {
    let cfg = tiny_config();
    let corpus = gen_corpus(&cfg.synth).unwrap();
    corpus.save(&dir.join("data")).unwrap();
    let system = System::new(&corpus, cfg.topology).unwrap();
    let model = train_system(&corpus, &system, &cfg).unwrap().model;
    model.save(&dir.join("model.bin")).unwrap();
    (corpus, system, model)
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(kws_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn null_arguments_are_reported() {
    unsafe {
        assert_eq!(kws_model_load(ptr::null(), ptr::null_mut()), KwsStatus::NullPointer);
        let mut m = ptr::null_mut();
        assert_eq!(kws_model_load(ptr::null(), &mut m), KwsStatus::NullPointer);
        assert!(m.is_null());
        assert!(last_error().contains("path"));
        assert_eq!(kws_model_num_units(ptr::null()), 0);
        assert_eq!(kws_spotter_num_keywords(ptr::null()), 0);
        assert!(kws_spotter_keyword(ptr::null(), 0).is_null());
        kws_model_free(ptr::null_mut());
        kws_spotter_free(ptr::null_mut());
        let mut out = 0.0;
        assert_eq!(kws_model_forward(ptr::null(), ptr::null(), 0, 0, &mut out, 1), KwsStatus::NullPointer);
    }
}

#[test]
fn missing_model_is_an_io_error() {
    let mut m = ptr::null_mut();
    let path = c("/nonexistent/model.bin");
    assert_eq!(unsafe { kws_model_load(path.as_ptr(), &mut m) }, KwsStatus::Io);
    assert!(m.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn eer_matches_the_library() {
    let pos = [0.9, 0.5, 0.7, 0.2];
    let neg = [0.1, 0.4, 0.5, 0.6, 0.05];
    let (mut eer, mut t) = (0.0, 0.0);
    let st = unsafe { kws_eer(pos.as_ptr(), pos.len(), neg.as_ptr(), neg.len(), &mut eer, &mut t) };
    assert_eq!(st, KwsStatus::Ok);
    assert!(last_error().is_empty());
    let (e, th, _) = compute_eer(&pos, &neg).unwrap();
    assert_eq!((eer, t), (e, th));
    let st = unsafe { kws_eer(pos.as_ptr(), pos.len(), ptr::null(), 0, &mut eer, &mut t) };
    assert_eq!(st, KwsStatus::InvalidArgument);
    let st = unsafe { kws_eer(ptr::null(), 3, neg.as_ptr(), neg.len(), &mut eer, &mut t) };
    assert_eq!(st, KwsStatus::NullPointer);
}

#[test]
fn model_and_spotter_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, system, model) = fixture(dir.path());
    let model_path = c(dir.path().join("model.bin").to_str().unwrap());
    let data_path = c(dir.path().join("data").to_str().unwrap());
    let utt = &corpus.test[0];
    let feats = utt.features.as_slice();
    let (frames, dim) = (utt.features.frames(), utt.features.units());

    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(kws_model_load(model_path.as_ptr(), &mut m), KwsStatus::Ok);
        assert_eq!(kws_model_input_dim(m), dim);
        let units = kws_model_num_units(m);
        assert_eq!(units, system.topology.num_classes());
        let out_frames = kws_model_output_frames(m, frames);
        let mut out = vec![0.0; out_frames * units];
        assert_eq!(kws_model_forward(m, feats.as_ptr(), frames, dim, out.as_mut_ptr(), out.len()), KwsStatus::Ok);
        assert_eq!(out, model.forward(&utt.features).unwrap().as_slice());
        assert_eq!(
            kws_model_forward(m, feats.as_ptr(), frames, dim, out.as_mut_ptr(), out.len() - 1),
            KwsStatus::BufferTooSmall
        );
        assert_eq!(
            kws_model_forward(m, feats.as_ptr(), frames, dim + 1, out.as_mut_ptr(), out.len()),
            KwsStatus::Dimension
        );
        kws_model_free(m);

        let cfg = tiny_config();
        let json = c(&serde_json::to_string(&cfg).unwrap());
        let mut s = ptr::null_mut();
        let mode = c("kwfiller");
        assert_eq!(kws_spotter_new(data_path.as_ptr(), model_path.as_ptr(), mode.as_ptr(), json.as_ptr(), &mut s), KwsStatus::Ok);
        let n = kws_spotter_num_keywords(s);
        assert_eq!(n, system.keywords.len());
        for (i, (name, _)) in system.keywords.iter().enumerate() {
            assert_eq!(CStr::from_ptr(kws_spotter_keyword(s, i)).to_str().unwrap(), name);
        }
        assert!(kws_spotter_keyword(s, n).is_null());
        let mut scores = vec![0.0; n];
        assert_eq!(kws_spotter_score(s, feats.as_ptr(), frames, dim, scores.as_mut_ptr(), n), KwsStatus::Ok);
        let decoder = Decoder::prepare(PostMode::Kwfiller, &system, &model, &corpus.dev, &cfg).unwrap();
        assert_eq!(scores, decoder.decode(utt, cfg.peak).unwrap().scores);
        assert_eq!(kws_spotter_score(s, feats.as_ptr(), frames, dim, scores.as_mut_ptr(), n - 1), KwsStatus::BufferTooSmall);
        kws_spotter_free(s);

        let bad = c("loudness");
        assert_eq!(kws_spotter_new(data_path.as_ptr(), model_path.as_ptr(), bad.as_ptr(), ptr::null(), &mut s), KwsStatus::Config);
        assert!(s.is_null());
        let med = c("med");
        assert_eq!(kws_spotter_new(data_path.as_ptr(), model_path.as_ptr(), med.as_ptr(), ptr::null(), &mut s), KwsStatus::Config);
        assert!(last_error().contains("CTC"));
    }
}

#[test]
fn header_declares_the_interface() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/kwseq.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "kws_last_error",
        "kws_version",
        "kws_model_load",
        "kws_model_free",
        "kws_model_forward",
        "kws_spotter_new",
        "kws_spotter_score",
        "kws_spotter_free",
        "kws_eer",
        "KWS_STATUS_OK = 0",
        "typedef struct KwsModel KwsModel",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
    // a C compiler, when present, must accept the header as is
    if let Ok(out) = Command::new("cc").args(["-fsyntax-only", "-xc", "-std=c99"]).arg(&header).output() {
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}
