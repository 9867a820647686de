use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;

use vlseg::crd::{
    build_triplets, colorize_mask, describe_regions, describe_with_fallback, remote_describe, ColorPalette, Describer,
    RemoteDescriberConfig,
};
use vlseg::data::{
    grouped_split, load_pair, read_jsonl, synth_toy_dataset, write_jsonl, DatasetManifest, Provenance, Triplet,
};

/// Serves `body` with status 200 to every request.
fn stub(body: &'static str) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        for mut stream in listener.incoming().flatten() {
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 {
                    break;
                }
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        length = v.trim().parse().unwrap();
                    }
                }
            }
            let mut buf = vec![0; length];
            let _ = reader.read_exact(&mut buf);
            let _ = write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
        }
    });
    format!("http://{addr}/describe")
}

fn unreachable_url() -> String {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    format!("http://127.0.0.1:{port}/describe")
}

fn toy(dir: &Path, scans: usize) -> (DatasetManifest, std::path::PathBuf) {
    let ds = synth_toy_dataset(scans, &["disk", "ring"], 32, 4).unwrap();
    let path = ds.write(dir).unwrap();
    let split = grouped_split(&ds.manifest, [0.8, 0.1, 0.1], 4).unwrap();
    write_jsonl(&path, &split.records).unwrap();
    (split, path)
}

#[test]
fn stub_text_is_returned_verbatim() {
    let ds = synth_toy_dataset(1, &["disk"], 32, 1).unwrap();
    let rgb = colorize_mask(&ds.slices[0].mask, &ColorPalette::standard()).unwrap();
    let cfg = RemoteDescriberConfig::new(stub(r#"{"text": "red blob upper left"}"#));
    assert_eq!(remote_describe(&rgb, &cfg).unwrap(), "red blob upper left");
    let (text, prov) = describe_with_fallback(&rgb, &ds.slices[0].mask, &cfg);
    assert_eq!((text.as_str(), prov), ("red blob upper left", Provenance::Remote));
}

#[test]
fn failures_fall_back_to_deterministic_text() {
    let ds = synth_toy_dataset(1, &["disk"], 32, 1).unwrap();
    let mask = &ds.slices[0].mask;
    let rgb = colorize_mask(mask, &ColorPalette::standard()).unwrap();
    let expected = describe_regions(mask).0;
    for url in [unreachable_url(), stub(""), stub(r#"{"text": "  "}"#), stub("not json")] {
        let cfg = RemoteDescriberConfig { retries: 1, timeout_secs: 2.0, ..RemoteDescriberConfig::new(url.clone()) };
        assert!(remote_describe(&rgb, &cfg).is_err(), "{url}");
        let (text, prov) = describe_with_fallback(&rgb, mask, &cfg);
        assert_eq!(prov, Provenance::Fallback);
        assert_eq!(text, expected);
    }
}

#[test]
fn triplets_parse_back_and_rebuild_identically() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, path) = toy(dir.path(), 3);
    let three = DatasetManifest::new(manifest.records[..3].to_vec(), manifest.seed).unwrap();
    let base = path.parent().unwrap();
    let out = dir.path().join("out/triplets.jsonl");
    let summary = build_triplets(&three, base, &ColorPalette::standard(), &Describer::default(), &out).unwrap();
    assert_eq!(summary.written, 3);
    let first = std::fs::read(&out).unwrap();
    let triplets: Vec<Triplet> = read_jsonl(&out).unwrap();
    assert_eq!(triplets.len(), 3);
    for (t, r) in triplets.iter().zip(&three.records) {
        assert_eq!(t.scan_id, r.scan_id);
        assert_eq!(Some(t.split), r.split);
        assert_eq!(t.provenance, Provenance::Deterministic);
        let (_, mask) = load_pair(&out.parent().unwrap().join(&t.image_ref), &out.parent().unwrap().join(&t.mask_ref)).unwrap();
        assert_eq!(t.category_entries.len(), mask.present_labels().len());
    }
    build_triplets(&three, base, &ColorPalette::standard(), &Describer::default(), &out).unwrap();
    assert_eq!(std::fs::read(&out).unwrap(), first);
}

#[test]
fn unreadable_mask_is_logged() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, path) = toy(dir.path(), 3);
    let three = DatasetManifest::new(manifest.records[..3].to_vec(), manifest.seed).unwrap();
    std::fs::write(dir.path().join(&three.records[1].mask_ref), b"\x89PNG broken").unwrap();
    let out = dir.path().join("triplets.jsonl");
    let summary = build_triplets(&three, path.parent().unwrap(), &ColorPalette::standard(), &Describer::default(), &out).unwrap();
    assert_eq!(summary.written, 2);
    assert_eq!(summary.errors.len(), 1);
    assert_eq!(summary.errors[0].sample_id, three.records[1].sample_id);
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 2);
    assert_eq!(std::fs::read_to_string(&summary.error_log).unwrap().lines().count(), 1);
}

#[test]
fn written_masks_read_back_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth_toy_dataset(2, &["disk", "ring"], 32, 4).unwrap();
    ds.write(dir.path()).unwrap();
    for (rec, slice) in ds.manifest.records.iter().zip(&ds.slices) {
        let (image, mask) = load_pair(&dir.path().join(&rec.image_ref), &dir.path().join(&rec.mask_ref)).unwrap();
        assert_eq!(mask.labels, slice.mask.labels);
        assert_eq!(image.dims(), (32, 32));
        assert!(image.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
