use std::fs::OpenOptions;
use std::io::{Seek, SeekFrom, Write};

use satjam_core::dataset::{
    generate_dataset_with, split, ChannelProfile, DatasetManifest, DatasetReader, Group, ScenarioConfig, SignalChain,
    SplitPolicy,
};
use satjam_core::featurizer::{FeatureParams, Label};
use satjam_core::ofdm::LinkParams;
use satjam_core::Error;

fn small_chain(n_rx: usize) -> SignalChain {
    let link = LinkParams {
        n_subcarriers: 64,
        n_data_subcarriers: 32,
        n_pilots: 4,
        pilot_spacing: 8,
        pilot_offset: 4,
        cp_len: 8,
        symbols_per_frame: 40,
        n_frames: 1,
        n_tx: 2,
        n_rx,
    };
    let features = FeatureParams::for_link(&link);
    SignalChain::new(link, ChannelProfile::reference(), features).unwrap()
}

fn small_dataset(dir: &std::path::Path, seed: u64) -> (satjam_core::DatasetPaths, DatasetManifest) {
    let config = ScenarioConfig::table(Group::A, 3, 1000, seed).unwrap();
    generate_dataset_with(&config, &small_chain(4), dir, |_, _| {}).unwrap()
}

#[test]
fn round_trip_preserves_tensors_and_order() {
    let dir = tempfile::tempdir().unwrap();
    let (paths, manifest) = small_dataset(dir.path(), 1);
    assert_eq!(manifest.records.len(), 200);
    assert_eq!(manifest.tensor_shape, [10, 16, 4]);
    let reader = DatasetReader::open(&paths).unwrap();
    assert_eq!(reader.manifest(), &manifest);

    let chain = manifest.chain().unwrap();
    let ids = [150, 3, 199, 3];
    let loaded = reader.load(&ids).unwrap();
    for (&id, x) in ids.iter().zip(&loaded) {
        let record = &manifest.records[id];
        let fresh = chain.generate_sample(&manifest.name, record).unwrap();
        assert_eq!(x.values, fresh.values, "sample {id}");
        assert_eq!(x.label, record.label);
        assert_eq!(x.meta.sample_id, id);
    }
    assert_eq!(loaded[0].label, Label::Absent);
    assert_eq!(loaded[1].label, Label::Present);
}

#[test]
fn generation_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (pa, ma) = small_dataset(a.path(), 5);
    let (pb, mb) = small_dataset(b.path(), 5);
    assert_eq!(ma.digest, mb.digest);
    assert_eq!(std::fs::read(pa.data).unwrap(), std::fs::read(pb.data).unwrap());
    let c = tempfile::tempdir().unwrap();
    let (_, mc) = small_dataset(c.path(), 6);
    assert_ne!(ma.digest, mc.digest);
}

#[test]
fn tampering_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    let (paths, _) = small_dataset(dir.path(), 2);
    let mut f = OpenOptions::new().write(true).open(&paths.data).unwrap();
    f.seek(SeekFrom::Start(1000)).unwrap();
    f.write_all(&[0xAB; 4]).unwrap();
    drop(f);
    assert!(matches!(DatasetReader::open(&paths), Err(Error::Format(_))));
}

#[test]
fn manifest_version_is_checked() {
    let dir = tempfile::tempdir().unwrap();
    let (paths, mut manifest) = small_dataset(dir.path(), 3);
    manifest.format_version = 99;
    let text = serde_json::to_string(&manifest).unwrap();
    std::fs::write(&paths.manifest, text).unwrap();
    assert!(matches!(DatasetReader::open(&paths), Err(Error::Format(_))));
}

#[test]
fn split_of_generated_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let (_, manifest) = small_dataset(dir.path(), 4);
    let s = split(&manifest, SplitPolicy::Sixty40, 9).unwrap();
    assert_eq!((s.train.len(), s.test.len()), (120, 80));
}
