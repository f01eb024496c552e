//! IDX container parsing (big-endian, magic-prefixed), with transparent
//! gzip support sniffed from the leading bytes.

use super::DigitImage;
use crate::error::{Error, Result};
use flate2::read::GzDecoder;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

pub const IMG_SIDE: usize = 28;
pub const IMG_AREA: usize = IMG_SIDE * IMG_SIDE;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// A digit dataset kept as one flat pixel buffer (count x 784, row-major,
/// values scaled to [0,1]) plus per-image labels.
#[derive(Debug, Clone)]
pub struct Digits {
    images: Vec<f32>,
    labels: Vec<u8>,
}

impl Digits {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        &self.images[i * IMG_AREA..(i + 1) * IMG_AREA]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn digit(&self, i: usize) -> DigitImage {
        DigitImage {
            pixels: self.image(i).to_vec(),
            label: self.label(i),
        }
    }

    pub fn from_parts(images: Vec<f32>, labels: Vec<u8>) -> Result<Self> {
        if images.len() != labels.len() * IMG_AREA {
            return Err(Error::dimension(
                "images",
                format!(
                    "{} pixel values do not match {} labels",
                    images.len(),
                    labels.len()
                ),
            ));
        }
        Ok(Digits { images, labels })
    }
}

fn open_maybe_gz(path: &Path) -> Result<Box<dyn Read>> {
    let mut f = BufReader::new(File::open(path)?);
    let mut head = [0u8; 2];
    let n = f.read(&mut head)?;
    let mut chained: Box<dyn Read> = Box::new(std::io::Cursor::new(head[..n].to_vec()).chain(f));
    if n == 2 && head == [0x1f, 0x8b] {
        chained = Box::new(GzDecoder::new(chained));
    }
    Ok(chained)
}

struct Counted<R> {
    inner: R,
    at: u64,
}

impl<R: Read> Counted<R> {
    fn read_checked(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner
            .read_exact(buf)
            .map_err(|e| Error::format(self.at, format!("truncated payload ({e})")))?;
        self.at += buf.len() as u64;
        Ok(())
    }

    fn u32_be(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_checked(&mut b)?;
        Ok(u32::from_be_bytes(b))
    }
}

fn read_images(path: &Path) -> Result<Vec<f32>> {
    let mut r = Counted {
        inner: open_maybe_gz(path)?,
        at: 0,
    };
    let magic = r.u32_be()?;
    if magic != IMAGES_MAGIC {
        return Err(Error::format(
            0,
            format!("bad image magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"),
        ));
    }
    let count = r.u32_be()? as usize;
    let rows = r.u32_be()? as usize;
    let cols = r.u32_be()? as usize;
    if rows != IMG_SIDE || cols != IMG_SIDE {
        return Err(Error::format(
            8,
            format!("unexpected image size {rows}x{cols}, expected {IMG_SIDE}x{IMG_SIDE}"),
        ));
    }
    let mut bytes = vec![0u8; count * rows * cols];
    r.read_checked(&mut bytes)?;
    // must be the end of the payload
    let mut probe = [0u8; 1];
    if r.inner.read(&mut probe)? != 0 {
        return Err(Error::format(r.at, "trailing bytes after image payload"));
    }
    Ok(bytes.iter().map(|&b| b as f32 / 255.0).collect())
}

fn read_labels(path: &Path) -> Result<Vec<u8>> {
    let mut r = Counted {
        inner: open_maybe_gz(path)?,
        at: 0,
    };
    let magic = r.u32_be()?;
    if magic != LABELS_MAGIC {
        return Err(Error::format(
            0,
            format!("bad label magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"),
        ));
    }
    let count = r.u32_be()? as usize;
    let mut bytes = vec![0u8; count];
    r.read_checked(&mut bytes)?;
    if let Some(&bad) = bytes.iter().find(|&&l| l > 9) {
        return Err(Error::format(r.at, format!("label {bad} outside 0..=9")));
    }
    Ok(bytes)
}

/// Loads an image/label file pair into a [`Digits`] dataset.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Digits> {
    let images = read_images(images_path)?;
    let labels = read_labels(labels_path)?;
    if images.len() != labels.len() * IMG_AREA {
        return Err(Error::format(
            4,
            format!(
                "{} images but {} labels",
                images.len() / IMG_AREA,
                labels.len()
            ),
        ));
    }
    Digits::from_parts(images, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_images(path: &Path, images: &[[u8; IMG_AREA]]) {
        let mut f = File::create(path).unwrap();
        f.write_all(&IMAGES_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&(images.len() as u32).to_be_bytes()).unwrap();
        f.write_all(&(IMG_SIDE as u32).to_be_bytes()).unwrap();
        f.write_all(&(IMG_SIDE as u32).to_be_bytes()).unwrap();
        for img in images {
            f.write_all(img).unwrap();
        }
    }

    fn write_labels(path: &Path, labels: &[u8]) {
        let mut f = File::create(path).unwrap();
        f.write_all(&LABELS_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&(labels.len() as u32).to_be_bytes()).unwrap();
        f.write_all(labels).unwrap();
    }

    #[test]
    fn loads_a_tiny_synthetic_file_pair() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("im.idx"), dir.path().join("lb.idx"));
        let mut img = [0u8; IMG_AREA];
        img[0] = 255;
        img[1] = 51;
        write_images(&ip, &[img, [0u8; IMG_AREA]]);
        write_labels(&lp, &[7, 0]);
        let d = load_idx(&ip, &lp).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.label(0), 7);
        assert_eq!(d.image(0)[0], 1.0);
        assert!((d.image(0)[1] - 0.2).abs() < 1e-6);
        assert!(d.image(1).iter().all(|&p| p == 0.0));
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.idx");
        std::fs::write(&p, 0xDEADBEEFu32.to_be_bytes()).unwrap();
        match load_idx(&p, &p) {
            Err(Error::Format { offset: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("im.idx"), dir.path().join("lb.idx"));
        write_images(&ip, &[[3u8; IMG_AREA]]);
        write_labels(&lp, &[1]);
        let bytes = std::fs::read(&ip).unwrap();
        std::fs::write(&ip, &bytes[..bytes.len() - 5]).unwrap();
        match load_idx(&ip, &lp) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 16),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("im.idx"), dir.path().join("lb.idx"));
        write_images(&ip, &[[0u8; IMG_AREA]]);
        write_labels(&lp, &[1, 2]);
        assert!(load_idx(&ip, &lp).is_err());
    }

    // The canonical archives live in the repository; their sizes pin the
    // loader against the published dataset.
    fn data_dir() -> std::path::PathBuf {
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
    }

    #[test]
    fn canonical_training_set_has_60000_images() {
        let d = load_idx(
            &data_dir().join("train-images-idx3-ubyte.gz"),
            &data_dir().join("train-labels-idx1-ubyte.gz"),
        )
        .unwrap();
        assert_eq!(d.len(), 60_000);
        assert!(d.image(0).iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn canonical_test_set_has_10000_images() {
        let d = load_idx(
            &data_dir().join("t10k-images-idx3-ubyte.gz"),
            &data_dir().join("t10k-labels-idx1-ubyte.gz"),
        )
        .unwrap();
        assert_eq!(d.len(), 10_000);
    }
}
