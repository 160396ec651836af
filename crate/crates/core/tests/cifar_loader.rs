use rrkd_core::data::{load_cifar10, read_records, write_records, DataError, Split, CIFAR_RECORDS_PER_FILE, CIFAR_RECORD_BYTES};

fn batch_file(first_label: usize) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(CIFAR_RECORDS_PER_FILE * CIFAR_RECORD_BYTES);
    for r in 0..CIFAR_RECORDS_PER_FILE {
        bytes.push(((first_label + r) % 10) as u8);
        bytes.extend((0..3072).map(|p| ((p + r) % 256) as u8));
    }
    bytes
}

#[test]
fn full_directory_loads_in_record_order() {
    let dir = tempfile::tempdir().unwrap();
    for (i, name) in ["data_batch_1", "data_batch_2", "data_batch_3", "data_batch_4", "data_batch_5", "test_batch"]
        .iter()
        .enumerate()
    {
        std::fs::write(dir.path().join(format!("{name}.bin")), batch_file(i)).unwrap();
    }
    let (train, test) = load_cifar10(dir.path()).unwrap();
    assert_eq!(train.len(), 50_000);
    assert_eq!(test.len(), 10_000);
    assert_eq!(test.split, Split::Test);
    assert_eq!(train.labels[0], 0);
    assert_eq!(train.labels[10_000], 1);
    assert_eq!(test.labels[0], 5);
    assert_eq!(train.image(1)[0], 1.0 / 255.0);
    assert!(train.images.iter().all(|v| (0.0..=1.0).contains(v)));

    let out = dir.path().join("copy.bin");
    write_records(&test, &out).unwrap();
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(dir.path().join("test_batch.bin")).unwrap());
    assert_eq!(read_records(&out, Split::Test).unwrap(), test);
}

#[test]
fn short_batch_file_is_rejected_by_the_directory_loader() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["data_batch_1", "data_batch_2", "data_batch_3", "data_batch_4", "data_batch_5", "test_batch"] {
        std::fs::write(dir.path().join(format!("{name}.bin")), vec![0u8; 2 * CIFAR_RECORD_BYTES]).unwrap();
    }
    match load_cifar10(dir.path()) {
        Err(DataError::FileSize { path, expected, actual }) => {
            assert!(path.ends_with("data_batch_1.bin"));
            assert_eq!(expected, CIFAR_RECORDS_PER_FILE * CIFAR_RECORD_BYTES);
            assert_eq!(actual, 2 * CIFAR_RECORD_BYTES);
        }
        other => panic!("{other:?}"),
    }
    let err = load_cifar10(dir.path().join("absent")).unwrap_err();
    assert!(matches!(err, DataError::Io { .. }), "{err:?}");
}
