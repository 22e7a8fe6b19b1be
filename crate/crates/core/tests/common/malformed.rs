//! Hand-built broken inputs, each paired with the error it must produce.

use distill_core::data::cifar::{parse_cifar, CifarVariant, IMAGE_BYTES};
use distill_core::data::idx::{self, encode_images, encode_labels, IdxImages, IMAGES_MAGIC, LABELS_MAGIC};
use distill_core::FormatError;

pub struct Malformed {
    pub name: &'static str,
    pub result: Result<(), FormatError>,
    pub expected: FormatError,
}

fn images(count: usize) -> Vec<u8> {
    encode_images(&IdxImages {
        count,
        rows: 2,
        cols: 2,
        pixels: vec![7; count * 4],
    })
}

fn idx_images(bytes: &[u8]) -> Result<(), FormatError> {
    idx::parse_images(bytes).map(|_| ())
}

fn idx_labels(bytes: &[u8]) -> Result<(), FormatError> {
    idx::parse_labels(bytes, 10).map(|_| ())
}

pub fn idx_cases() -> Vec<Malformed> {
    let good = images(3);
    let mut zero_dim = good.clone();
    zero_dim[8..12].copy_from_slice(&0u32.to_be_bytes());
    let mut trailing = good.clone();
    trailing.push(0);
    let mut bad_label = encode_labels(&[1, 2, 3]);
    bad_label[9] = 10;
    let mismatch = {
        let imgs = idx::parse_images(&images(3)).unwrap();
        let labs = idx::parse_labels(&encode_labels(&[1, 2]), 10).unwrap();
        idx::to_batch(&imgs, &labs, 10).map(|_| ())
    };
    vec![
        Malformed {
            name: "empty file",
            result: idx_images(&[]),
            expected: FormatError::Empty,
        },
        Malformed {
            name: "shorter than a magic number",
            result: idx_images(&good[..3]),
            expected: FormatError::TruncatedHeader { needed: 16, available: 3 },
        },
        Malformed {
            name: "label magic in an image file",
            result: idx_images(&encode_labels(&[1])),
            expected: FormatError::BadMagic {
                expected: IMAGES_MAGIC,
                found: LABELS_MAGIC,
            },
        },
        Malformed {
            name: "image magic in a label file",
            result: idx_labels(&good),
            expected: FormatError::BadMagic {
                expected: LABELS_MAGIC,
                found: IMAGES_MAGIC,
            },
        },
        Malformed {
            name: "header cut after two dimensions",
            result: idx_images(&good[..12]),
            expected: FormatError::TruncatedHeader { needed: 16, available: 12 },
        },
        Malformed {
            name: "zero rows",
            result: idx_images(&zero_dim),
            expected: FormatError::ZeroDimension { dims: vec![3, 0, 2] },
        },
        Malformed {
            name: "pixels cut short",
            result: idx_images(&good[..good.len() - 5]),
            expected: FormatError::TruncatedPayload { needed: 12, available: 7 },
        },
        Malformed {
            name: "bytes after the pixels",
            result: idx_images(&trailing),
            expected: FormatError::TrailingBytes { extra: 1 },
        },
        Malformed {
            name: "label outside ten classes",
            result: idx_labels(&bad_label),
            expected: FormatError::LabelOutOfRange {
                index: 1,
                label: 10,
                classes: 10,
            },
        },
        Malformed {
            name: "fewer labels than images",
            result: mismatch,
            expected: FormatError::CountMismatch { images: 3, labels: 2 },
        },
    ]
}

fn record(labels: &[u8]) -> Vec<u8> {
    let mut r = labels.to_vec();
    r.extend(std::iter::repeat_n(128u8, IMAGE_BYTES));
    r
}

fn cifar10(bytes: &[u8]) -> Result<(), FormatError> {
    parse_cifar(bytes, CifarVariant::Cifar10).map(|_| ())
}

fn cifar100(bytes: &[u8]) -> Result<(), FormatError> {
    parse_cifar(bytes, CifarVariant::Cifar100).map(|_| ())
}

pub fn cifar_cases() -> Vec<Malformed> {
    let two10 = [record(&[3]), record(&[4])].concat();
    let two100 = [record(&[1, 50]), record(&[2, 60])].concat();
    let size = |len: usize, record: usize| FormatError::RecordSize { len, record };
    vec![
        Malformed {
            name: "empty file",
            result: cifar10(&[]),
            expected: FormatError::Empty,
        },
        Malformed {
            name: "single byte",
            result: cifar10(&[1]),
            expected: size(1, 3073),
        },
        Malformed {
            name: "image without its label",
            result: cifar10(&two10[1..3073]),
            expected: size(3072, 3073),
        },
        Malformed {
            name: "one byte past a record",
            result: cifar10(&two10[..3074]),
            expected: size(3074, 3073),
        },
        Malformed {
            name: "second record truncated",
            result: cifar10(&two10[..6000]),
            expected: size(6000, 3073),
        },
        Malformed {
            name: "label 10 in a ten-class file",
            result: cifar10(&[record(&[10]), record(&[1])].concat()),
            expected: FormatError::LabelOutOfRange {
                index: 0,
                label: 10,
                classes: 10,
            },
        },
        Malformed {
            name: "label 255 in the second record",
            result: cifar10(&[record(&[1]), record(&[255])].concat()),
            expected: FormatError::LabelOutOfRange {
                index: 1,
                label: 255,
                classes: 10,
            },
        },
        Malformed {
            name: "hundred-class records read as ten-class",
            result: cifar10(&two100),
            expected: size(6148, 3073),
        },
        Malformed {
            name: "ten-class records read as hundred-class",
            result: cifar100(&two10),
            expected: size(6146, 3074),
        },
        Malformed {
            name: "fine label 100",
            result: cifar100(&record(&[1, 100])),
            expected: FormatError::LabelOutOfRange {
                index: 0,
                label: 100,
                classes: 100,
            },
        },
    ]
}
