//! Chunk storage: payload handles, the packed container format, chunk
//! stores and the simulator's cost model.
//!
//! Stores only expose whole-chunk reads. There is no per-file read path.

pub mod container;
mod cost;

use std::borrow::Cow;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use container::PackedChunkFile;
pub use cost::{CostModel, SimCost};

use crate::error::StorageError;
use crate::layout::{FileId, Layout, PcId};
use crate::seed::mix;

/// Bytes of one file, either held in memory or regenerated on demand from
/// a seed.
#[derive(Clone)]
pub struct Payload {
    file_id: FileId,
    len: u64,
    data: PayloadData,
}

#[derive(Clone)]
enum PayloadData {
    Bytes(Arc<[u8]>),
    Synthetic { seed: u64 },
}

impl Payload {
    pub fn from_bytes(file_id: FileId, bytes: impl Into<Arc<[u8]>>) -> Self {
        let bytes = bytes.into();
        Self {
            file_id,
            len: bytes.len() as u64,
            data: PayloadData::Bytes(bytes),
        }
    }

    /// Lazily generated payload; see [`synthetic_bytes`].
    pub fn synthetic(file_id: FileId, len: u64, payload_seed: u64) -> Self {
        Self {
            file_id,
            len,
            data: PayloadData::Synthetic { seed: payload_seed },
        }
    }

    pub fn file_id(&self) -> FileId {
        self.file_id
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bytes(&self) -> Cow<'_, [u8]> {
        match &self.data {
            PayloadData::Bytes(b) => Cow::Borrowed(b),
            PayloadData::Synthetic { seed } => Cow::Owned(synthetic_bytes(*seed, self.file_id, self.len)),
        }
    }
}

impl PartialEq for Payload {
    fn eq(&self, other: &Self) -> bool {
        if self.file_id != other.file_id || self.len != other.len {
            return false;
        }
        match (&self.data, &other.data) {
            (PayloadData::Synthetic { seed: a }, PayloadData::Synthetic { seed: b }) if a == b => true,
            _ => self.bytes() == other.bytes(),
        }
    }
}

impl Eq for Payload {}

impl fmt::Debug for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.data {
            PayloadData::Bytes(_) => "bytes",
            PayloadData::Synthetic { .. } => "synthetic",
        };
        f.debug_struct("Payload")
            .field("file_id", &self.file_id)
            .field("len", &self.len)
            .field("kind", &kind)
            .finish()
    }
}

/// Deterministic pseudo-random content for `file_id`.
pub fn synthetic_bytes(payload_seed: u64, file_id: FileId, len: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(payload_seed, file_id as u64));
    let mut buf = vec![0u8; len as usize];
    rng.fill_bytes(&mut buf);
    buf
}

/// Whole-chunk reads. Implementations return the `K` payloads of `pc` in
/// slot order.
pub trait ChunkStore {
    fn read_chunk(&self, pc: PcId) -> Result<Vec<Payload>, StorageError>;

    fn read_chunk_with_cost(&self, pc: PcId, cost: &CostModel) -> Result<(Vec<Payload>, SimCost), StorageError> {
        let payloads = self.read_chunk(pc)?;
        let bytes = payloads.iter().map(Payload::len).sum();
        Ok((payloads, cost.chunk_read(bytes)))
    }
}

/// In-memory store whose payloads are generated from `payload_seed`.
#[derive(Debug, Clone)]
pub struct SyntheticStore {
    sizes: Arc<[u64]>,
    chunk_size: usize,
    payload_seed: u64,
}

impl SyntheticStore {
    pub fn new(layout: &Layout, payload_seed: u64) -> Self {
        Self {
            sizes: layout.sizes().into(),
            chunk_size: layout.chunk_size(),
            payload_seed,
        }
    }
}

impl ChunkStore for SyntheticStore {
    fn read_chunk(&self, pc: PcId) -> Result<Vec<Payload>, StorageError> {
        let start = pc * self.chunk_size;
        let end = start + self.chunk_size;
        if end > self.sizes.len() {
            return Err(StorageError::ChunkOutOfRange(pc as u64));
        }
        Ok((start..end)
            .map(|f| Payload::synthetic(f, self.sizes[f], self.payload_seed))
            .collect())
    }
}

/// Where `pack_chunks` gets file content from.
pub trait PayloadSource {
    fn payload(&self, file: FileId) -> Result<Vec<u8>, StorageError>;
}

#[derive(Debug, Clone)]
pub struct SyntheticSource {
    sizes: Arc<[u64]>,
    payload_seed: u64,
}

impl SyntheticSource {
    pub fn new(layout: &Layout, payload_seed: u64) -> Self {
        Self {
            sizes: layout.sizes().into(),
            payload_seed,
        }
    }
}

impl PayloadSource for SyntheticSource {
    fn payload(&self, file: FileId) -> Result<Vec<u8>, StorageError> {
        let len = *self.sizes.get(file).ok_or(StorageError::MissingPayload(file as u64))?;
        Ok(synthetic_bytes(self.payload_seed, file, len))
    }
}

/// A directory of raw files. The i-th regular file in lexicographic name
/// order is file id `i`.
#[derive(Debug, Clone)]
pub struct DirSource {
    paths: Vec<PathBuf>,
}

impl DirSource {
    pub fn open(dir: &Path) -> Result<Self, StorageError> {
        let mut paths = Vec::new();
        for entry in fs::read_dir(dir)? {
            let entry = entry?;
            if entry.file_type()?.is_file() {
                paths.push(entry.path());
            }
        }
        paths.sort();
        Ok(Self { paths })
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Sizes of the files in id order, for building a layout over them.
    pub fn sizes(&self) -> Result<Vec<u64>, StorageError> {
        self.paths.iter().map(|p| Ok(fs::metadata(p)?.len())).collect()
    }
}

impl PayloadSource for DirSource {
    fn payload(&self, file: FileId) -> Result<Vec<u8>, StorageError> {
        let path = self.paths.get(file).ok_or(StorageError::MissingPayload(file as u64))?;
        Ok(fs::read(path)?)
    }
}

/// Container for one physical chunk, checked against the layout's sizes.
pub fn pack_chunk(layout: &Layout, pc: PcId, source: &dyn PayloadSource) -> Result<PackedChunkFile, StorageError> {
    if pc >= layout.chunk_map().num_pcs() {
        return Err(StorageError::ChunkOutOfRange(pc as u64));
    }
    let files = layout
        .files_of_pc(pc)
        .map(|f| {
            let bytes = source.payload(f)?;
            let expected = layout.size_of(f);
            if bytes.len() as u64 != expected {
                return Err(StorageError::SizeMismatch {
                    file_id: f as u64,
                    expected,
                    got: bytes.len() as u64,
                });
            }
            Ok((f as u64, bytes))
        })
        .collect::<Result<Vec<_>, StorageError>>()?;
    Ok(PackedChunkFile { files })
}

pub fn chunk_file_name(pc: PcId) -> String {
    format!("chunk-{pc:08}.rdox")
}

/// Writes one container per physical chunk into `out`. Returns the number
/// of containers written.
pub fn pack_chunks(layout: &Layout, source: &dyn PayloadSource, out: &Path) -> Result<usize, StorageError> {
    fs::create_dir_all(out)?;
    let n = layout.chunk_map().num_pcs();
    for pc in 0..n {
        let bytes = pack_chunk(layout, pc, source)?.encode();
        fs::write(out.join(chunk_file_name(pc)), bytes)?;
    }
    Ok(n)
}

fn check_membership(layout: &Layout, pc: PcId, chunk: PackedChunkFile) -> Result<Vec<Payload>, StorageError> {
    let expected: Vec<FileId> = layout.files_of_pc(pc).collect();
    if chunk.files.len() != expected.len() {
        return Err(StorageError::Corrupt(format!(
            "chunk {pc} holds {} files, chunk size is {}",
            chunk.files.len(),
            expected.len()
        )));
    }
    chunk
        .files
        .into_iter()
        .zip(expected)
        .enumerate()
        .map(|(slot, ((id, bytes), want))| {
            if id != want as u64 {
                return Err(StorageError::Membership {
                    pc: pc as u64,
                    slot,
                    expected: want as u64,
                    found: id,
                });
            }
            if bytes.len() as u64 != layout.size_of(want) {
                return Err(StorageError::SizeMismatch {
                    file_id: id,
                    expected: layout.size_of(want),
                    got: bytes.len() as u64,
                });
            }
            Ok(Payload::from_bytes(want, bytes))
        })
        .collect()
}

/// Reads containers written by [`pack_chunks`].
#[derive(Debug, Clone)]
pub struct DirStore {
    dir: PathBuf,
    layout: Arc<Layout>,
}

impl DirStore {
    pub fn new(dir: impl Into<PathBuf>, layout: Arc<Layout>) -> Self {
        Self {
            dir: dir.into(),
            layout,
        }
    }
}

impl ChunkStore for DirStore {
    fn read_chunk(&self, pc: PcId) -> Result<Vec<Payload>, StorageError> {
        if pc >= self.layout.chunk_map().num_pcs() {
            return Err(StorageError::ChunkOutOfRange(pc as u64));
        }
        let bytes = fs::read(self.dir.join(chunk_file_name(pc)))?;
        check_membership(&self.layout, pc, PackedChunkFile::decode(&bytes)?)
    }
}

/// Encoded containers held in memory.
#[derive(Debug, Clone)]
pub struct MemoryStore {
    containers: Vec<Vec<u8>>,
    layout: Arc<Layout>,
}

impl MemoryStore {
    pub fn pack(layout: Arc<Layout>, source: &dyn PayloadSource) -> Result<Self, StorageError> {
        let containers = (0..layout.chunk_map().num_pcs())
            .map(|pc| pack_chunk(&layout, pc, source).map(|c| c.encode()))
            .collect::<Result<_, _>>()?;
        Ok(Self { containers, layout })
    }

    pub fn container(&self, pc: PcId) -> &[u8] {
        &self.containers[pc]
    }
}

impl ChunkStore for MemoryStore {
    fn read_chunk(&self, pc: PcId) -> Result<Vec<Payload>, StorageError> {
        let bytes = self
            .containers
            .get(pc)
            .ok_or(StorageError::ChunkOutOfRange(pc as u64))?;
        check_membership(&self.layout, pc, PackedChunkFile::decode(bytes)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::LayoutConfig;

    fn layout() -> Arc<Layout> {
        let sizes = (0..24).map(|i| 1 + (i * 37 % 11) as u64).collect();
        Arc::new(Layout::build(LayoutConfig::new(24, 4, 3, 1), sizes).unwrap())
    }

    #[test]
    fn synthetic_bytes_are_stable_per_file() {
        assert_eq!(synthetic_bytes(1, 5, 32), synthetic_bytes(1, 5, 32));
        assert_ne!(synthetic_bytes(1, 5, 32), synthetic_bytes(1, 6, 32));
        assert_ne!(synthetic_bytes(1, 5, 32), synthetic_bytes(2, 5, 32));
        assert_eq!(synthetic_bytes(1, 5, 64)[..32], synthetic_bytes(1, 5, 32)[..]);
    }

    #[test]
    fn synthetic_store_matches_packed_store() {
        let l = layout();
        let synth = SyntheticStore::new(&l, 9);
        let packed = MemoryStore::pack(l.clone(), &SyntheticSource::new(&l, 9)).unwrap();
        for pc in 0..6 {
            assert_eq!(synth.read_chunk(pc).unwrap(), packed.read_chunk(pc).unwrap());
        }
        assert!(synth.read_chunk(6).is_err());
        assert!(packed.read_chunk(6).is_err());
    }

    #[test]
    fn dir_round_trip() {
        let l = layout();
        let tmp = tempfile::tempdir().unwrap();
        let src = SyntheticSource::new(&l, 3);
        assert_eq!(pack_chunks(&l, &src, tmp.path()).unwrap(), 6);
        let store = DirStore::new(tmp.path(), l.clone());
        for pc in 0..6 {
            let got = store.read_chunk(pc).unwrap();
            for (p, f) in got.iter().zip(l.files_of_pc(pc)) {
                assert_eq!(p.file_id(), f);
                assert_eq!(p.bytes().into_owned(), src.payload(f).unwrap());
            }
        }
    }

    #[test]
    fn packing_checks_sizes() {
        struct Short;
        impl PayloadSource for Short {
            fn payload(&self, _: FileId) -> Result<Vec<u8>, StorageError> {
                Ok(vec![0; 1000])
            }
        }
        let err = pack_chunk(&layout(), 0, &Short).unwrap_err();
        assert!(matches!(err, StorageError::SizeMismatch { .. }));
    }

    #[test]
    fn read_detects_wrong_membership() {
        let l = layout();
        let tmp = tempfile::tempdir().unwrap();
        pack_chunks(&l, &SyntheticSource::new(&l, 3), tmp.path()).unwrap();
        fs::copy(tmp.path().join(chunk_file_name(1)), tmp.path().join(chunk_file_name(0))).unwrap();
        let err = DirStore::new(tmp.path(), l).read_chunk(0).unwrap_err();
        assert!(matches!(err, StorageError::Membership { pc: 0, slot: 0, .. }));
    }

    #[test]
    fn chunk_cost_uses_total_bytes() {
        let l = layout();
        let store = SyntheticStore::new(&l, 0);
        let cost = CostModel::default();
        let (p, c) = store.read_chunk_with_cost(2, &cost).unwrap();
        let bytes: u64 = l.files_of_pc(2).map(|f| l.size_of(f)).sum();
        assert_eq!(p.len(), 4);
        assert_eq!(c, cost.chunk_read(bytes));
    }
}
