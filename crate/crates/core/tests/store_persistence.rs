use std::fs;

use flowsmith_core::model::RecordId;
use flowsmith_core::store::{to_line, StoreError, StoreHandle, STORE_FILE};
use flowsmith_core::testkit::random_record;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const DIM: usize = 12;

#[test]
fn thousand_records_round_trip_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(STORE_FILE);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = StoreHandle::load(&path, DIM).unwrap();
    let mut expected = Vec::new();
    for i in 0..1000 {
        let id = store.append(random_record(&mut rng, i, DIM)).unwrap();
        assert_eq!(id, RecordId(i as u64 + 1));
        expected.push(store.records().last().unwrap().clone());
    }
    let written = fs::read(&path).unwrap();

    let loaded = StoreHandle::load(&path, DIM).unwrap();
    assert_eq!(loaded.records(), expected.as_slice());
    let reserialized: String = loaded.records().iter().map(|r| to_line(r) + "\n").collect();
    assert_eq!(reserialized.as_bytes(), written.as_slice());
}

#[test]
fn missing_file_is_an_empty_store() {
    let dir = tempfile::tempdir().unwrap();
    let store = StoreHandle::load(dir.path().join("nope").join(STORE_FILE), DIM).unwrap();
    assert!(store.is_empty());
}

#[test]
fn malformed_line_three_aborts_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(STORE_FILE);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = StoreHandle::load(&path, DIM).unwrap();
    for i in 0..5 {
        store.append(random_record(&mut rng, i, DIM)).unwrap();
    }
    let raw = fs::read_to_string(&path).unwrap();
    let corrupted: String = raw
        .lines()
        .enumerate()
        .map(|(i, l)| if i == 2 { l.replace("\"workflow\"", "\"workflw\"") } else { l.to_string() } + "\n")
        .collect();
    fs::write(&path, corrupted).unwrap();
    match StoreHandle::load(&path, DIM) {
        Err(StoreError::CorruptRecord { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected corrupt line 3, got {other:?}"),
    }
}

#[test]
fn wrong_dimension_on_disk_is_corrupt() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(STORE_FILE);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = StoreHandle::load(&path, DIM).unwrap();
    let mut n = 0;
    while store.records().iter().all(|r| r.embeddings.is_none()) {
        store.append(random_record(&mut rng, n, DIM)).unwrap();
        n += 1;
    }
    let line = store.records().iter().position(|r| r.embeddings.is_some()).unwrap() + 1;
    assert!(matches!(
        StoreHandle::load(&path, DIM + 1),
        Err(StoreError::CorruptRecord { line: l, .. }) if l == line
    ));
}
