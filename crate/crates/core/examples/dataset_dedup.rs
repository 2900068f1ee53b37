//! Ingesting the same dataset bytes several times stores them once.

use hybridnn::dataset::DatasetStore;
use hybridnn::demo;

fn main() -> hybridnn::Result<()> {
    let bytes = demo::bar_images(3, 128, 32);
    let mut store = DatasetStore::new();
    for k in 1..=5 {
        let hash = store.ingest_bytes(&bytes)?;
        println!("ingest #{k}: {} datasets, {} bytes ({})", store.len(), store.footprint_bytes(), &hash.as_str()[..12]);
    }
    store.ingest_bytes(&demo::two_class_data(1, 256, 64))?;
    println!("after a different dataset: {} datasets, {} bytes", store.len(), store.footprint_bytes());

    let hash = store.hashes().next().expect("not empty").clone();
    let a = store.batches(&hash, 32, 0, 7)?;
    let b = store.batches(&hash, 32, 1, 7)?;
    println!("{} batches per epoch; epochs 0 and 1 shuffle differently: {}", a.len(), a[0].inputs != b[0].inputs);
    Ok(())
}
