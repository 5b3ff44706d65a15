//! On-disk formats survive a write/read cycle and reject damaged input.

use exo2ego_core::checkpoint::Checkpoint;
use exo2ego_core::data::{FlowField, Manifest, View};
use exo2ego_core::retrieval::{Gallery, GalleryKind, SourceId};
use exo2ego_core::toygen::{generate_dataset, ToygenConfig};
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f32> {
    -1e6f32..1e6f32
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flow_round_trip(h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
        let n = h * w * 2;
        let vectors: Vec<f32> = (0..n).map(|i| ((seed.wrapping_add(i as u64) % 2001) as f32 - 1000.0) / 7.0).collect();
        let f = FlowField::new(h, w, vectors, 3).unwrap();
        let back = FlowField::decode(&f.encode(), 3).unwrap();
        prop_assert_eq!(back, f);
    }

    #[test]
    fn gallery_round_trip(dim in 1usize..5, rows in prop::collection::vec(prop::collection::vec(finite(), 4), 0..6)) {
        let mut g = Gallery::new(GalleryKind::Ego, dim);
        for (t, r) in rows.iter().enumerate() {
            g.push(SourceId::new("s00-q01", t, View::Ego), &r[..dim]).unwrap();
        }
        let back = Gallery::decode(&g.encode()).unwrap();
        prop_assert_eq!(back, g);
    }

    #[test]
    fn checkpoint_round_trip(values in prop::collection::vec(finite(), 1..20), epoch in 0usize..1000, step in any::<u64>()) {
        let mut c = Checkpoint::new("retrieval", serde_json::json!({ "width": values.len() }));
        c.epoch = epoch;
        c.step = step;
        c.push_array("w".into(), vec![values.len()], values.clone());
        let back = Checkpoint::decode(&c.encode()).unwrap();
        prop_assert_eq!(back, c);
    }

    #[test]
    fn truncated_buffers_are_rejected(values in prop::collection::vec(finite(), 2..10), cut in 1usize..8) {
        let f = FlowField::new(1, values.len() / 2, values[..values.len() / 2 * 2].to_vec(), 0).unwrap();
        let bytes = f.encode();
        prop_assert!(FlowField::decode(&bytes[..bytes.len() - cut.min(bytes.len())], 0).is_err());
        let mut c = Checkpoint::new("synthesis", serde_json::Value::Null);
        c.push_array("w".into(), vec![values.len()], values);
        let bytes = c.encode();
        prop_assert!(Checkpoint::decode(&bytes[..bytes.len() - cut]).is_err());
    }
}

#[test]
fn toy_dataset_reloads_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ToygenConfig {
        scenes: 1,
        seqs: 3,
        len: 4,
        ..ToygenConfig::default()
    };
    cfg.rig.size = 24;
    let m = generate_dataset(&cfg, dir.path()).unwrap();
    let loaded = Manifest::load(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(loaded.sequences, m.sequences);
    assert_eq!(loaded.counts, m.counts);
    loaded.validate().unwrap();
    loaded.verify_media().unwrap();

    let missing = loaded.frame_path(&loaded.sequences[0], View::Ego, 0);
    std::fs::remove_file(&missing).unwrap();
    assert!(loaded.verify_media().is_err());
}

#[test]
fn files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut g = Gallery::new(GalleryKind::SynthesizedEgo, 2);
    g.push(SourceId::new("s01-q00", 4, View::Ego), &[0.25, -1.5]).unwrap();
    let p = dir.path().join("nested/g.eemb");
    g.save(&p).unwrap();
    assert_eq!(Gallery::load(&p).unwrap(), g);

    let f = FlowField::new(2, 1, vec![1.0, 2.0, 3.0, 4.0], 7).unwrap();
    let p = dir.path().join("f.eflo");
    f.save(&p).unwrap();
    assert_eq!(FlowField::load(&p, 7).unwrap(), f);

    let err = Gallery::load(&dir.path().join("absent.eemb")).unwrap_err();
    assert_eq!(err.name(), "MissingFile");
}
