//! IDX ingestion, downscaling, task filtering and amplitude encoding.

use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::statevec::StateVector;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// An encoded input with its class index.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub state: StateVector,
    pub label: usize,
}

/// Row-major grayscale image with real pixel values in `[0, 255]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<f64>,
}

impl Image {
    pub fn new(rows: usize, cols: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                found: pixels.len(),
            });
        }
        Ok(Self { rows, cols, pixels })
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        self.pixels[r * self.cols + c]
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            offset: bytes.len(),
            message: format!("header truncated (needed byte {})", offset + 4),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = be_u32(bytes, 0)?;
    if magic != expected {
        return Err(Error::Format {
            offset: 0,
            message: format!("magic {magic:#010x}, expected {expected:#010x}"),
        });
    }
    Ok(())
}

fn check_payload(bytes: &[u8], header: usize, needed: usize) -> Result<()> {
    let have = bytes.len() - header;
    if have < needed {
        return Err(Error::Format {
            offset: bytes.len(),
            message: format!("payload truncated: {have} of {needed} bytes after the {header}-byte header"),
        });
    }
    if have > needed {
        return Err(Error::Format {
            offset: header + needed,
            message: format!("{} trailing bytes beyond the declared count", have - needed),
        });
    }
    Ok(())
}

/// Parses an image file (`0x00000803`) and a label file (`0x00000801`).
/// Gzip-compressed files are detected by their magic bytes.
pub fn parse_idx(image_bytes: &[u8], label_bytes: &[u8]) -> Result<(Vec<Image>, Vec<u8>)> {
    check_magic(image_bytes, IMAGE_MAGIC)?;
    let count = be_u32(image_bytes, 4)? as usize;
    let rows = be_u32(image_bytes, 8)? as usize;
    let cols = be_u32(image_bytes, 12)? as usize;
    check_payload(image_bytes, 16, count * rows * cols)?;

    check_magic(label_bytes, LABEL_MAGIC)?;
    let n_labels = be_u32(label_bytes, 4)? as usize;
    check_payload(label_bytes, 8, n_labels)?;
    if n_labels != count {
        return Err(Error::Format {
            offset: 4,
            message: format!("{count} images but {n_labels} labels"),
        });
    }

    let images = image_bytes[16..]
        .chunks_exact(rows * cols)
        .map(|px| Image {
            rows,
            cols,
            pixels: px.iter().map(|&b| b as f64).collect(),
        })
        .collect();
    Ok((images, label_bytes[8..].to_vec()))
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<(Vec<Image>, Vec<u8>)> {
    let images = read_maybe_gz(images_path.as_ref())?;
    let labels = read_maybe_gz(labels_path.as_ref())?;
    parse_idx(&images, &labels).map_err(|e| match e {
        Error::Format { offset, message } => Error::Format {
            offset,
            message: format!("{message} ({} / {})", images_path.as_ref().display(), labels_path.as_ref().display()),
        },
        other => other,
    })
}

/// Bilinear resampling from 28×28 to 16×16. Output corners sit on input
/// corners, so sample `i` reads input coordinate `i · 27/15`.
pub fn downscale(image: &Image) -> Result<Image> {
    if image.rows != 28 || image.cols != 28 {
        return Err(Error::InvalidArgument(format!(
            "downscale expects 28x28, got {}x{}",
            image.rows, image.cols
        )));
    }
    Ok(resize_bilinear(image, 16))
}

fn resize_bilinear(image: &Image, side: usize) -> Image {
    let scale_r = (image.rows - 1) as f64 / (side - 1) as f64;
    let scale_c = (image.cols - 1) as f64 / (side - 1) as f64;
    let mut pixels = Vec::with_capacity(side * side);
    for i in 0..side {
        let y = i as f64 * scale_r;
        let y0 = (y.floor() as usize).min(image.rows - 2);
        let fy = y - y0 as f64;
        for j in 0..side {
            let x = j as f64 * scale_c;
            let x0 = (x.floor() as usize).min(image.cols - 2);
            let fx = x - x0 as f64;
            let top = image.at(y0, x0) * (1.0 - fx) + image.at(y0, x0 + 1) * fx;
            let bottom = image.at(y0 + 1, x0) * (1.0 - fx) + image.at(y0 + 1, x0 + 1) * fx;
            pixels.push((top * (1.0 - fy) + bottom * fy).clamp(0.0, 255.0));
        }
    }
    Image {
        rows: side,
        cols: side,
        pixels,
    }
}

/// Flattens row-major, zero-pads the tail to `2^n_qubits`, and L2-normalizes.
pub fn amplitude_encode(image: &Image, n_qubits: usize) -> Result<StateVector> {
    let dim = 1usize << n_qubits;
    if image.pixels.len() > dim {
        return Err(Error::InvalidArgument(format!(
            "{} pixels do not fit in {n_qubits} qubits",
            image.pixels.len()
        )));
    }
    if image.pixels.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidArgument("pixels must be finite and non-negative".into()));
    }
    let norm = image.pixels.iter().map(|p| p * p).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroImage);
    }
    let mut amps = vec![Complex64::new(0.0, 0.0); dim];
    for (a, p) in amps.iter_mut().zip(&image.pixels) {
        *a = Complex64::new(p / norm, 0.0);
    }
    StateVector::normalized(n_qubits, amps)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dataset {
    Mnist,
    FashionMnist,
}

impl Dataset {
    /// Loads every split present under `dir` (training split first) and pools
    /// them. File names follow the standard distribution, optionally `.gz`.
    pub fn load(self, dir: impl AsRef<Path>) -> Result<(Vec<Image>, Vec<u8>)> {
        let dir = dir.as_ref();
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for split in ["train", "t10k"] {
            let find = |stem: String| -> Option<PathBuf> {
                [stem.clone(), format!("{stem}.gz")]
                    .into_iter()
                    .map(|f| dir.join(f))
                    .find(|p| p.is_file())
            };
            let (Some(img), Some(lab)) = (
                find(format!("{split}-images-idx3-ubyte")),
                find(format!("{split}-labels-idx1-ubyte")),
            ) else {
                continue;
            };
            let (i, l) = load_idx(img, lab)?;
            images.extend(i);
            labels.extend(l);
        }
        if images.is_empty() {
            return Err(Error::io(
                dir.join("{train,t10k}-images-idx3-ubyte[.gz]"),
                std::io::Error::new(std::io::ErrorKind::NotFound, "no IDX image/label pair found"),
            ));
        }
        Ok((images, labels))
    }
}

/// Which images, which classes, and how they are split and encoded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskSpec {
    pub dataset: Dataset,
    /// Original class ids; position in this list is the training label.
    pub classes: Vec<u8>,
    /// 16 (downscaled, 8 qubits) or 28 (padded, 10 qubits).
    pub image_side: usize,
    pub train_limit: usize,
    pub test_limit: usize,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            dataset: Dataset::Mnist,
            classes: vec![3, 6],
            image_side: 16,
            train_limit: 2000,
            test_limit: 500,
        }
    }
}

impl TaskSpec {
    pub fn n_qubits(&self) -> usize {
        let pixels = self.image_side * self.image_side;
        (usize::BITS - (pixels - 1).leading_zeros()) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=4).contains(&self.classes.len()) {
            return Err(Error::InvalidArgument(format!(
                "a task needs 2 to 4 classes, got {}",
                self.classes.len()
            )));
        }
        for (i, c) in self.classes.iter().enumerate() {
            if self.classes[..i].contains(c) {
                return Err(Error::InvalidArgument(format!("class {c} listed twice")));
            }
        }
        if self.image_side != 16 && self.image_side != 28 {
            return Err(Error::InvalidArgument(format!(
                "image_side must be 16 or 28, got {}",
                self.image_side
            )));
        }
        Ok(())
    }

    /// Short identifier such as `mnist[3,6]`.
    pub fn name(&self) -> String {
        let ds = match self.dataset {
            Dataset::Mnist => "mnist",
            Dataset::FashionMnist => "fashion-mnist",
        };
        let classes: Vec<String> = self.classes.iter().map(u8::to_string).collect();
        format!("{ds}[{}]", classes.join(","))
    }
}

/// Encodes one raw image for a task, downscaling when needed.
pub fn encode_for(spec: &TaskSpec, image: &Image) -> Result<StateVector> {
    let sized = if spec.image_side == 16 && image.rows == 28 {
        downscale(image)?
    } else {
        image.clone()
    };
    if sized.rows != spec.image_side || sized.cols != spec.image_side {
        return Err(Error::InvalidArgument(format!(
            "image is {}x{}, task expects {}x{}",
            sized.rows, sized.cols, spec.image_side, spec.image_side
        )));
    }
    amplitude_encode(&sized, spec.n_qubits())
}

/// Filters to `spec.classes`, relabels them `0..C`, shuffles, and takes
/// disjoint train and test portions.
pub fn build_task<R: Rng + ?Sized>(spec: &TaskSpec, images: &[Image], labels: &[u8], rng: &mut R) -> Result<(Vec<Sample>, Vec<Sample>)> {
    spec.validate()?;
    if images.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: images.len(),
            found: labels.len(),
        });
    }
    for c in &spec.classes {
        if !labels.contains(c) {
            return Err(Error::InvalidArgument(format!("class {c} does not occur in the dataset")));
        }
    }
    let mut picked: Vec<(usize, usize)> = labels
        .iter()
        .enumerate()
        .filter_map(|(i, l)| spec.classes.iter().position(|c| c == l).map(|label| (i, label)))
        .collect();
    let wanted = spec.train_limit + spec.test_limit;
    if wanted > picked.len() {
        return Err(Error::InvalidArgument(format!(
            "{} requests {wanted} samples but only {} are available",
            spec.name(),
            picked.len()
        )));
    }
    picked.shuffle(rng);
    let encode = |&(i, label): &(usize, usize)| -> Result<Sample> {
        Ok(Sample {
            state: encode_for(spec, &images[i])?,
            label,
        })
    };
    let train = picked[..spec.train_limit].iter().map(encode).collect::<Result<Vec<_>>>()?;
    let test = picked[spec.train_limit..wanted].iter().map(encode).collect::<Result<Vec<_>>>()?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn idx_images(count: u32, rows: u32, cols: u32, fill: impl Fn(usize) -> u8) -> Vec<u8> {
        let mut v = Vec::new();
        for x in [IMAGE_MAGIC, count, rows, cols] {
            v.extend(x.to_be_bytes());
        }
        v.extend((0..(count * rows * cols) as usize).map(fill));
        v
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend(LABEL_MAGIC.to_be_bytes());
        v.extend((labels.len() as u32).to_be_bytes());
        v.extend(labels);
        v
    }

    fn test_pattern() -> Image {
        let px = (0..28 * 28)
            .map(|i| {
                let (r, c) = (i / 28, i % 28);
                ((r * 37 + c * 11 + r * c) % 256) as f64
            })
            .collect();
        Image::new(28, 28, px).unwrap()
    }

    #[test]
    fn parses_idx() {
        let imgs = idx_images(3, 2, 2, |i| i as u8);
        let labs = idx_labels(&[1, 2, 3]);
        let (images, labels) = parse_idx(&imgs, &labs).unwrap();
        assert_eq!(images.len(), 3);
        assert_eq!(images[1].pixels, vec![4.0, 5.0, 6.0, 7.0]);
        assert_eq!(labels, vec![1, 2, 3]);
    }

    #[test]
    fn idx_errors() {
        let imgs = idx_images(3, 2, 2, |i| i as u8);
        let labs = idx_labels(&[1, 2, 3]);
        // labels passed where images belong, and vice versa
        assert!(matches!(parse_idx(&labs, &labs), Err(Error::Format { offset: 0, .. })));
        let mut wrong_magic = labs.clone();
        wrong_magic[3] = 0x03;
        assert!(matches!(parse_idx(&imgs, &wrong_magic), Err(Error::Format { offset: 0, .. })));
        let truncated = &imgs[..imgs.len() - 5];
        match parse_idx(truncated, &labs) {
            Err(Error::Format { offset, message }) => {
                assert_eq!(offset, truncated.len());
                assert!(message.contains("truncated"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_idx(&imgs[..6], &labs), Err(Error::Format { .. })));
        let short_labels = idx_labels(&[1, 2]);
        assert!(matches!(parse_idx(&imgs, &short_labels), Err(Error::Format { offset: 4, .. })));
    }

    #[test]
    fn loads_plain_and_gzip_files() {
        use flate2::write::GzEncoder;
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        let imgs = idx_images(2, 28, 28, |i| (i % 7) as u8);
        let labs = idx_labels(&[3, 6]);
        std::fs::write(dir.path().join("train-images-idx3-ubyte"), &imgs).unwrap();
        std::fs::write(dir.path().join("train-labels-idx1-ubyte"), &labs).unwrap();
        let mut gz = GzEncoder::new(Vec::new(), flate2::Compression::default());
        gz.write_all(&imgs).unwrap();
        std::fs::write(dir.path().join("t10k-images-idx3-ubyte.gz"), gz.finish().unwrap()).unwrap();
        std::fs::write(dir.path().join("t10k-labels-idx1-ubyte"), &labs).unwrap();
        let (images, labels) = Dataset::Mnist.load(dir.path()).unwrap();
        assert_eq!(images.len(), 4);
        assert_eq!(labels, vec![3, 6, 3, 6]);
        assert_eq!(images[0], images[2]);
        // same file layout for both distributions
        assert_eq!(Dataset::FashionMnist.load(dir.path()).unwrap().1, labels);

        let missing = Dataset::Mnist.load(dir.path().join("nope")).unwrap_err();
        assert!(missing.to_string().contains("nope"));
        assert!(load_idx(dir.path().join("absent"), dir.path().join("absent")).is_err());
    }

    #[test]
    fn downscale_examples() {
        let flat = Image::new(28, 28, vec![200.0; 784]).unwrap();
        let d = downscale(&flat).unwrap();
        assert_eq!((d.rows, d.cols), (16, 16));
        assert!(d.pixels.iter().all(|p| (p - 200.0).abs() < 1e-12));
        let zero = downscale(&Image::new(28, 28, vec![0.0; 784]).unwrap()).unwrap();
        assert!(zero.pixels.iter().all(|p| *p == 0.0));
        assert!(downscale(&Image::new(16, 16, vec![0.0; 256]).unwrap()).is_err());

        let p = test_pattern();
        let d = downscale(&p).unwrap();
        assert_eq!(d.pixels[0], p.at(0, 0));
        assert_eq!(d.pixels[15], p.at(0, 27));
        assert_eq!(d.pixels[255], p.at(27, 27));
        assert!(d.pixels.iter().all(|v| (0.0..=255.0).contains(v)));
    }

    #[test]
    fn downscale_matches_golden() {
        let golden_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/downscale_golden.txt");
        let got: String = downscale(&test_pattern())
            .unwrap()
            .pixels
            .iter()
            .map(|v| format!("{v:?}\n"))
            .collect();
        if std::env::var_os("QUANTEST_BLESS").is_some() {
            std::fs::write(&golden_path, &got).unwrap();
        }
        let want = std::fs::read_to_string(&golden_path).expect("golden file present");
        assert_eq!(got, want);
    }

    #[test]
    fn encoding_examples() {
        let small = Image::new(16, 16, (0..256).map(|i| (i % 255) as f64).collect()).unwrap();
        let s = amplitude_encode(&small, 8).unwrap();
        assert_eq!(s.dim(), 256);

        let big = test_pattern();
        let s = amplitude_encode(&big, 10).unwrap();
        assert_eq!(s.dim(), 1024);
        assert!(s.amplitudes()[784..].iter().all(|a| a.norm() == 0.0));
        assert!((s.norm() - 1.0).abs() < 1e-12);

        let mut one_hot = vec![0.0; 256];
        one_hot[37] = 9.0;
        let s = amplitude_encode(&Image::new(16, 16, one_hot).unwrap(), 8).unwrap();
        assert_eq!(s, StateVector::basis(8, 37).unwrap());

        assert!(matches!(amplitude_encode(&Image::new(16, 16, vec![0.0; 256]).unwrap(), 8), Err(Error::ZeroImage)));
        assert!(amplitude_encode(&big, 9).is_err());
    }

    #[test]
    fn encoding_round_trip() {
        let img = downscale(&test_pattern()).unwrap();
        let norm = img.pixels.iter().map(|p| p * p).sum::<f64>().sqrt();
        let s = amplitude_encode(&img, 8).unwrap();
        for (a, p) in s.amplitudes().iter().zip(&img.pixels) {
            assert!(a.im == 0.0 && a.re >= 0.0);
            assert!((a.re * norm - p).abs() < 1e-9);
        }
    }

    fn synthetic_pool() -> (Vec<Image>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let labels: Vec<u8> = (0..60).map(|i| (i % 5) as u8).collect();
        let images = labels
            .iter()
            .map(|_| Image::new(28, 28, (0..784).map(|_| rng.random_range(0.0..255.0f64).floor()).collect()).unwrap())
            .collect();
        (images, labels)
    }

    #[test]
    fn build_task_examples() {
        let (images, labels) = synthetic_pool();
        let spec = TaskSpec {
            classes: vec![3, 1],
            train_limit: 16,
            test_limit: 8,
            ..TaskSpec::default()
        };
        assert_eq!(spec.n_qubits(), 8);
        let (train, test) = build_task(&spec, &images, &labels, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!((train.len(), test.len()), (16, 8));
        assert!(train.iter().chain(&test).all(|s| s.label < 2 && s.state.n_qubits() == 8));
        let again = build_task(&spec, &images, &labels, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(again, (train.clone(), test.clone()));
        for s in &test {
            assert!(!train.contains(s));
        }

        let three = TaskSpec {
            classes: vec![0, 1, 2],
            image_side: 28,
            train_limit: 30,
            test_limit: 6,
            ..TaskSpec::default()
        };
        assert_eq!(three.n_qubits(), 10);
        let (train, _) = build_task(&three, &images, &labels, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let mut seen: Vec<usize> = train.iter().map(|s| s.label).collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen, vec![0, 1, 2]);
    }

    #[test]
    fn build_task_errors() {
        let (images, labels) = synthetic_pool();
        let rng = &mut ChaCha8Rng::seed_from_u64(0);
        let absent = TaskSpec {
            classes: vec![3, 9],
            ..TaskSpec::default()
        };
        assert!(build_task(&absent, &images, &labels, rng).is_err());
        let too_many = TaskSpec {
            classes: vec![3, 1],
            train_limit: 20,
            test_limit: 5,
            ..TaskSpec::default()
        };
        assert!(build_task(&too_many, &images, &labels, rng).is_err());
        let one_class = TaskSpec {
            classes: vec![3],
            ..TaskSpec::default()
        };
        assert!(one_class.validate().is_err());
        let dup = TaskSpec {
            classes: vec![3, 3],
            ..TaskSpec::default()
        };
        assert!(dup.validate().is_err());
    }
}
