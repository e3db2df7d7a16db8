//! On-disk dataset layout: little-endian binary signal tensors, a label
//! table, and planted ground-truth graphs.
//!
//! A dataset directory holds `data.bin` (signals), `labels.csv`, `meta.json`
//! (written by the generator), and `planted.bin` (ground-truth graphs, when
//! the data is synthetic). Readers validate magic bytes, version, and
//! payload sizes before touching the contents.

use std::fs;
use std::io::{BufWriter, Read as _, Write as _};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Magic bytes of `data.bin`.
pub const DATA_MAGIC: &[u8; 4] = b"DDNT";
/// Magic bytes of `planted.bin`.
pub const PLANTED_MAGIC: &[u8; 4] = b"DDNP";
/// Current version of both formats.
pub const FORMAT_VERSION: u32 = 1;

/// A labeled multivariate-signal dataset. Signals are (N, V, T').
#[derive(Debug, Clone)]
pub struct Dataset {
    pub signals: Tensor<f32>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(signals: Tensor<f32>, labels: Vec<usize>) -> Result<Self> {
        let ds = Dataset { signals, labels };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.signals.shape();
        if shape.len() != 3 {
            return Err(Error::invalid(
                "dataset",
                format!("signals must be (N,V,T'), got {shape:?}"),
            ));
        }
        if self.labels.len() != shape[0] {
            return Err(Error::invalid(
                "dataset",
                format!("{} labels for {} subjects", self.labels.len(), shape[0]),
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.signals.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn regions(&self) -> usize {
        self.signals.shape()[1]
    }

    pub fn series_len(&self) -> usize {
        self.signals.shape()[2]
    }

    /// Number of distinct labels, assuming they are 0..K dense.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |&m| m + 1)
    }

    /// Copy of one subject's signal, shape (V, T').
    pub fn subject(&self, i: usize) -> Result<Tensor<f32>> {
        let (n, v, t) = (self.len(), self.regions(), self.series_len());
        if i >= n {
            return Err(Error::invalid("dataset", format!("subject {i} out of range 0..{n}")));
        }
        let start = i * v * t;
        Tensor::from_vec(&[v, t], self.signals.data()[start..start + v * t].to_vec())
    }

    /// Copy of a batch of subjects stacked into (B, V, T').
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor<f32>> {
        let (v, t) = (self.regions(), self.series_len());
        let mut data = Vec::with_capacity(indices.len() * v * t);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::invalid("dataset", format!("subject {i} out of range")));
            }
            data.extend_from_slice(&self.signals.data()[i * v * t..(i + 1) * v * t]);
        }
        Tensor::from_vec(&[indices.len(), v, t], data)
    }
}

// ---------------------------------------------------------------------------
// data.bin + labels.csv
// ---------------------------------------------------------------------------

fn io_err(context: &str, path: &Path, e: std::io::Error) -> Error {
    Error::io(format!("{context} {}", path.display()), e)
}

fn fmt_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::format(path.display().to_string(), detail)
}

/// Write `data.bin` and `labels.csv` into `dir` (created if missing).
pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    dataset.validate()?;
    fs::create_dir_all(dir).map_err(|e| io_err("create", dir, e))?;

    let path = dir.join("data.bin");
    let file = fs::File::create(&path).map_err(|e| io_err("create", &path, e))?;
    let mut w = BufWriter::new(file);
    let shape = dataset.signals.shape();
    let mut header = Vec::with_capacity(20);
    header.extend_from_slice(DATA_MAGIC);
    header.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for &dim in shape {
        header.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    w.write_all(&header).map_err(|e| io_err("write", &path, e))?;
    let mut payload = Vec::with_capacity(dataset.signals.len() * 4);
    for &x in dataset.signals.data() {
        payload.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&payload).map_err(|e| io_err("write", &path, e))?;
    w.flush().map_err(|e| io_err("write", &path, e))?;

    let path = dir.join("labels.csv");
    let mut out = String::from("subject_id,label\n");
    for (i, &label) in dataset.labels.iter().enumerate() {
        out.push_str(&format!("{i},{label}\n"));
    }
    fs::write(&path, out).map_err(|e| io_err("write", &path, e))?;
    Ok(())
}

/// Read a dataset directory written by [`write_dataset`]; exact inverse.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join("data.bin");
    let mut file = fs::File::open(&path).map_err(|e| io_err("open", &path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| io_err("read", &path, e))?;
    if bytes.len() < 20 {
        return Err(fmt_err(&path, "file shorter than the 20-byte header"));
    }
    if &bytes[0..4] != DATA_MAGIC {
        return Err(fmt_err(&path, format!("bad magic {:?}", &bytes[0..4])));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != FORMAT_VERSION {
        return Err(fmt_err(&path, format!("unsupported version {version}")));
    }
    let (n, v, t) = (word(8) as usize, word(12) as usize, word(16) as usize);
    let expect = n
        .checked_mul(v)
        .and_then(|x| x.checked_mul(t))
        .and_then(|x| x.checked_mul(4))
        .ok_or_else(|| fmt_err(&path, "header dimensions overflow"))?;
    if bytes.len() - 20 != expect {
        return Err(fmt_err(
            &path,
            format!("payload is {} bytes, header promises {expect}", bytes.len() - 20),
        ));
    }
    let data: Vec<f32> = bytes[20..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let signals = Tensor::from_vec(&[n, v, t], data)?;

    let path = dir.join("labels.csv");
    let text = fs::read_to_string(&path).map_err(|e| io_err("open", &path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("subject_id,label") => {}
        other => {
            return Err(fmt_err(&path, format!("expected header subject_id,label, got {other:?}")));
        }
    }
    let mut labels = Vec::with_capacity(n);
    for (i, line) in lines.enumerate() {
        let (id, label) = line
            .split_once(',')
            .ok_or_else(|| fmt_err(&path, format!("row {i}: missing comma")))?;
        let id: usize = id
            .parse()
            .map_err(|_| fmt_err(&path, format!("row {i}: bad subject id {id:?}")))?;
        if id != i {
            return Err(fmt_err(&path, format!("row {i}: out-of-order subject id {id}")));
        }
        let label: usize = label
            .parse()
            .map_err(|_| fmt_err(&path, format!("row {i}: bad label {label:?}")))?;
        labels.push(label);
    }
    if labels.len() != n {
        return Err(fmt_err(&path, format!("{} label rows for {n} subjects", labels.len())));
    }
    Dataset::new(signals, labels)
}

// ---------------------------------------------------------------------------
// planted.bin
// ---------------------------------------------------------------------------

/// Ground-truth binary dependency graphs, one per (class, regime) pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlantedGraphs {
    pub classes: usize,
    pub regimes: usize,
    pub regions: usize,
    /// 0/1 entries, row-major [class][regime][V][V].
    edges: Vec<u8>,
}

impl PlantedGraphs {
    pub fn new(classes: usize, regimes: usize, regions: usize) -> Self {
        PlantedGraphs { classes, regimes, regions, edges: vec![0; classes * regimes * regions * regions] }
    }

    fn offset(&self, class: usize, regime: usize, i: usize, j: usize) -> usize {
        debug_assert!(class < self.classes && regime < self.regimes);
        debug_assert!(i < self.regions && j < self.regions);
        ((class * self.regimes + regime) * self.regions + i) * self.regions + j
    }

    pub fn get(&self, class: usize, regime: usize, i: usize, j: usize) -> bool {
        self.edges[self.offset(class, regime, i, j)] != 0
    }

    /// Set an undirected edge (both triangles).
    pub fn set(&mut self, class: usize, regime: usize, i: usize, j: usize, present: bool) {
        let v = u8::from(present);
        let a = self.offset(class, regime, i, j);
        self.edges[a] = v;
        let b = self.offset(class, regime, j, i);
        self.edges[b] = v;
    }

    /// One graph as a dense (V, V) tensor of 0.0/1.0.
    pub fn adjacency(&self, class: usize, regime: usize) -> Tensor<f32> {
        let v = self.regions;
        let start = self.offset(class, regime, 0, 0);
        let data: Vec<f32> = self.edges[start..start + v * v].iter().map(|&e| e as f32).collect();
        Tensor::from_vec(&[v, v], data).expect("dimensions are consistent by construction")
    }

    /// Undirected edge count (upper triangle).
    pub fn edge_count(&self, class: usize, regime: usize) -> usize {
        let v = self.regions;
        let mut n = 0;
        for i in 0..v {
            for j in i + 1..v {
                n += usize::from(self.get(class, regime, i, j));
            }
        }
        n
    }

    /// Undirected edges present in exactly one of two classes' graphs.
    pub fn differing_edges(&self, class_a: usize, class_b: usize, regime: usize) -> usize {
        let v = self.regions;
        let mut n = 0;
        for i in 0..v {
            for j in i + 1..v {
                n += usize::from(self.get(class_a, regime, i, j) != self.get(class_b, regime, i, j));
            }
        }
        n
    }
}

/// Write planted graphs as `planted.bin`.
pub fn write_planted(path: &Path, planted: &PlantedGraphs) -> Result<()> {
    let mut bytes = Vec::with_capacity(20 + planted.edges.len());
    bytes.extend_from_slice(PLANTED_MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for dim in [planted.classes, planted.regimes, planted.regions] {
        bytes.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    bytes.extend_from_slice(&planted.edges);
    fs::write(path, bytes).map_err(|e| io_err("write", path, e))
}

/// Read `planted.bin`; exact inverse of [`write_planted`].
pub fn read_planted(path: &Path) -> Result<PlantedGraphs> {
    let bytes = fs::read(path).map_err(|e| io_err("open", path, e))?;
    if bytes.len() < 20 {
        return Err(fmt_err(path, "file shorter than the 20-byte header"));
    }
    if &bytes[0..4] != PLANTED_MAGIC {
        return Err(fmt_err(path, format!("bad magic {:?}", &bytes[0..4])));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != FORMAT_VERSION {
        return Err(fmt_err(path, format!("unsupported version {version}")));
    }
    let (classes, regimes, regions) = (word(8) as usize, word(12) as usize, word(16) as usize);
    let expect = classes * regimes * regions * regions;
    if bytes.len() - 20 != expect {
        return Err(fmt_err(
            path,
            format!("payload is {} bytes, header promises {expect}", bytes.len() - 20),
        ));
    }
    let edges = bytes[20..].to_vec();
    if let Some(&bad) = edges.iter().find(|&&e| e > 1) {
        return Err(fmt_err(path, format!("entries must be 0 or 1, found {bad}")));
    }
    Ok(PlantedGraphs { classes, regimes, regions, edges })
}

// ---------------------------------------------------------------------------
