//! Static placement of files into physical chunks, virtual chunks and home
//! nodes.
//!
//! Files are stored consecutively: file `f` lives in physical chunk `f / K`
//! at offset `f % K`. Node `n` is home to the contiguous file range
//! `[n·F/N, (n+1)·F/N)`. Inside each node, runs of `G = F/(K·M)` local
//! physical chunks are bound to one local virtual chunk, so the physical
//! chunk set of every virtual chunk has exactly `G` members.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, ParseError};

pub type FileId = usize;
pub type PcId = usize;
pub type VcId = usize;
pub type NodeId = usize;

/// 1.5 GB, the tuned remote virtual-chunk budget for a 16 GB node.
pub const DEFAULT_REMOTE_VC_BUDGET: u64 = 1_500_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutConfig {
    /// Total number of files (F).
    #[serde(alias = "F")]
    pub files: usize,
    /// Files per chunk (K).
    #[serde(alias = "K")]
    pub chunk_size: usize,
    /// Virtual chunks across all nodes (M).
    #[serde(alias = "M")]
    pub virtual_chunks: usize,
    /// Node count (N).
    #[serde(alias = "N")]
    pub nodes: usize,
    /// Prefetch window size (P).
    #[serde(alias = "P")]
    pub prefetch_window: usize,
    #[serde(default)]
    pub layout_seed: u64,
    /// Bytes per node reserved for virtual chunks holding remote data.
    #[serde(default = "default_budget")]
    pub remote_vc_budget: u64,
}

fn default_budget() -> u64 {
    DEFAULT_REMOTE_VC_BUDGET
}

impl LayoutConfig {
    pub fn new(files: usize, chunk_size: usize, virtual_chunks: usize, nodes: usize) -> Self {
        Self {
            files,
            chunk_size,
            virtual_chunks,
            nodes,
            prefetch_window: 1,
            layout_seed: 0,
            remote_vc_budget: DEFAULT_REMOTE_VC_BUDGET,
        }
    }

    pub fn with_prefetch_window(mut self, p: usize) -> Self {
        self.prefetch_window = p;
        self
    }

    pub fn with_budget(mut self, bytes: u64) -> Self {
        self.remote_vc_budget = bytes;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, value) in [
            ("F (files)", self.files),
            ("K (chunk size)", self.chunk_size),
            ("M (virtual chunks)", self.virtual_chunks),
            ("N (nodes)", self.nodes),
            ("P (prefetch window)", self.prefetch_window),
        ] {
            if value == 0 {
                return Err(ConfigError::Zero { name, value: 0 });
            }
        }
        if self.prefetch_window > u16::MAX as usize {
            return Err(ConfigError::Invalid(format!(
                "P (prefetch window) must fit in 16 bits, got {}",
                self.prefetch_window
            )));
        }
        let checks = [
            ("M mod N == 0", self.virtual_chunks.is_multiple_of(self.nodes)),
            (
                "F mod (K*M) == 0",
                self.files.is_multiple_of(self.chunk_size * self.virtual_chunks),
            ),
            ("F mod N == 0", self.files.is_multiple_of(self.nodes)),
        ];
        for (constraint, ok) in checks {
            if !ok {
                return Err(ConfigError::Divisibility {
                    constraint,
                    files: self.files as u64,
                    chunk_size: self.chunk_size as u64,
                    virtual_chunks: self.virtual_chunks as u64,
                    nodes: self.nodes as u64,
                });
            }
        }
        Ok(())
    }

    /// Size of every physical chunk set, `G = F/(K·M)`.
    pub fn pcs_size(&self) -> usize {
        self.files / (self.chunk_size * self.virtual_chunks)
    }

    pub fn physical_chunks(&self) -> usize {
        self.files / self.chunk_size
    }

    pub fn files_per_node(&self) -> usize {
        self.files / self.nodes
    }

    pub fn vcs_per_node(&self) -> usize {
        self.virtual_chunks / self.nodes
    }
}

/// Static per-file placement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileMeta {
    pub file_id: FileId,
    pub pc: PcId,
    pub vc: VcId,
    pub offset: usize,
    pub home: NodeId,
    pub size: u64,
}

impl FileMeta {
    /// The (vc, offset, home) triple a request may be redirected within.
    pub fn slot(&self) -> (VcId, usize, NodeId) {
        (self.vc, self.offset, self.home)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkMap {
    pc_to_vc: Vec<VcId>,
    vc_to_pcs: Vec<Vec<PcId>>,
    vc_home: Vec<NodeId>,
}

impl ChunkMap {
    fn build(config: &LayoutConfig) -> Self {
        let g = config.pcs_size();
        let vcs_per_node = config.vcs_per_node();
        let pcs_per_node = config.physical_chunks() / config.nodes;
        let mut pc_to_vc = vec![0; config.physical_chunks()];
        let mut vc_to_pcs = vec![Vec::with_capacity(g); config.virtual_chunks];
        let mut vc_home = vec![0; config.virtual_chunks];
        for node in 0..config.nodes {
            for local_pc in 0..pcs_per_node {
                let pc = node * pcs_per_node + local_pc;
                let vc = node * vcs_per_node + local_pc / g;
                pc_to_vc[pc] = vc;
                vc_to_pcs[vc].push(pc);
                vc_home[vc] = node;
            }
        }
        Self {
            pc_to_vc,
            vc_to_pcs,
            vc_home,
        }
    }

    pub fn vc_of(&self, pc: PcId) -> VcId {
        self.pc_to_vc[pc]
    }

    /// Physical chunk set of `vc`, in ascending chunk order.
    pub fn pcs(&self, vc: VcId) -> &[PcId] {
        &self.vc_to_pcs[vc]
    }

    pub fn home_of_vc(&self, vc: VcId) -> NodeId {
        self.vc_home[vc]
    }

    pub fn num_vcs(&self) -> usize {
        self.vc_to_pcs.len()
    }

    pub fn num_pcs(&self) -> usize {
        self.pc_to_vc.len()
    }
}

/// Immutable dataset layout: configuration, file sizes and chunk map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    config: LayoutConfig,
    sizes: Vec<u64>,
    map: ChunkMap,
}

impl Layout {
    pub fn build(config: LayoutConfig, file_sizes: Vec<u64>) -> Result<Self, ConfigError> {
        config.validate()?;
        if file_sizes.len() != config.files {
            return Err(ConfigError::SizeCount {
                expected: config.files,
                got: file_sizes.len(),
            });
        }
        if let Some(file_id) = file_sizes.iter().position(|&s| s == 0) {
            return Err(ConfigError::EmptyFile {
                file_id: file_id as u64,
            });
        }
        let map = ChunkMap::build(&config);
        Ok(Self {
            config,
            sizes: file_sizes,
            map,
        })
    }

    /// Layout where every file has the same size.
    pub fn uniform(config: LayoutConfig, size: u64) -> Result<Self, ConfigError> {
        let sizes = vec![size; config.files];
        Self::build(config, sizes)
    }

    pub fn config(&self) -> &LayoutConfig {
        &self.config
    }

    pub fn chunk_map(&self) -> &ChunkMap {
        &self.map
    }

    pub fn num_files(&self) -> usize {
        self.config.files
    }

    pub fn chunk_size(&self) -> usize {
        self.config.chunk_size
    }

    pub fn nodes(&self) -> usize {
        self.config.nodes
    }

    pub fn pcs_size(&self) -> usize {
        self.config.pcs_size()
    }

    pub fn sizes(&self) -> &[u64] {
        &self.sizes
    }

    pub fn size_of(&self, file: FileId) -> u64 {
        self.sizes[file]
    }

    pub fn total_bytes(&self) -> u64 {
        self.sizes.iter().sum()
    }

    /// Placement of `file`. Panics if `file` is out of range; see
    /// [`Layout::slot_of`] for the checked form.
    pub fn meta(&self, file: FileId) -> FileMeta {
        let k = self.config.chunk_size;
        let pc = file / k;
        let vc = self.map.vc_of(pc);
        FileMeta {
            file_id: file,
            pc,
            vc,
            offset: file % k,
            home: self.map.home_of_vc(vc),
            size: self.sizes[file],
        }
    }

    pub fn slot_of(&self, file: FileId) -> Result<(VcId, usize, NodeId), ConfigError> {
        if file >= self.config.files {
            return Err(ConfigError::FileOutOfRange {
                file_id: file as u64,
                files: self.config.files as u64,
            });
        }
        Ok(self.meta(file).slot())
    }

    /// File stored at `slot` of physical chunk `pc`.
    pub fn file_at(&self, pc: PcId, slot: usize) -> FileId {
        pc * self.config.chunk_size + slot
    }

    pub fn files_of_pc(&self, pc: PcId) -> std::ops::Range<FileId> {
        let k = self.config.chunk_size;
        pc * k..(pc + 1) * k
    }

    pub fn home_of(&self, file: FileId) -> NodeId {
        file / self.config.files_per_node()
    }

    /// Physical chunks stored on `node`, which form a contiguous range.
    pub fn pcs_of_node(&self, node: NodeId) -> std::ops::Range<PcId> {
        let per = self.map.num_pcs() / self.config.nodes;
        node * per..(node + 1) * per
    }

    pub fn vcs_of_node(&self, node: NodeId) -> std::ops::Range<VcId> {
        let per = self.config.vcs_per_node();
        node * per..(node + 1) * per
    }

    /// `redox-layout v1 F K M N P seed` followed by one
    /// `file_id pc vc offset home size` line per file.
    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut out = String::with_capacity(32 * c.files + 64);
        let _ = writeln!(
            out,
            "redox-layout v1 {} {} {} {} {} {}",
            c.files, c.chunk_size, c.virtual_chunks, c.nodes, c.prefetch_window, c.layout_seed
        );
        for f in 0..c.files {
            let m = self.meta(f);
            let _ = writeln!(
                out,
                "{} {} {} {} {} {}",
                m.file_id, m.pc, m.vc, m.offset, m.home, m.size
            );
        }
        out
    }

    /// Parses [`Layout::to_text`] output. Placement columns are checked
    /// against the layout rebuilt from the header; the remote budget is not
    /// part of the format and takes its default.
    pub fn from_text(text: &str) -> Result<Self, ParseError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| ParseError::new(1, "empty layout file"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 8 || fields[0] != "redox-layout" || fields[1] != "v1" {
            return Err(ParseError::new(1, "expected header `redox-layout v1 F K M N P seed`"));
        }
        let num = |i: usize| -> Result<u64, ParseError> {
            fields[i]
                .parse::<u64>()
                .map_err(|e| ParseError::new(1, format!("header field {}: {e}", i - 1)))
        };
        let config = LayoutConfig {
            files: num(2)? as usize,
            chunk_size: num(3)? as usize,
            virtual_chunks: num(4)? as usize,
            nodes: num(5)? as usize,
            prefetch_window: num(6)? as usize,
            layout_seed: num(7)?,
            remote_vc_budget: DEFAULT_REMOTE_VC_BUDGET,
        };
        config.validate().map_err(|e| ParseError::new(1, e.to_string()))?;

        let mut sizes = vec![0u64; config.files];
        let mut rows = Vec::with_capacity(config.files);
        for (idx, line) in lines {
            let lineno = idx + 1;
            let cols = parse_u64_columns(line, 6, lineno)?;
            let file = cols[0] as usize;
            if file >= config.files {
                return Err(ParseError::new(lineno, format!("file id {file} out of range")));
            }
            if sizes[file] != 0 {
                return Err(ParseError::new(lineno, format!("file id {file} listed twice")));
            }
            sizes[file] = cols[5];
            rows.push((lineno, cols));
        }
        if rows.len() != config.files {
            return Err(ParseError::new(
                rows.len() + 1,
                format!("expected {} file lines, found {}", config.files, rows.len()),
            ));
        }
        let layout = Layout::build(config, sizes).map_err(|e| ParseError::new(1, e.to_string()))?;
        for (lineno, cols) in rows {
            let m = layout.meta(cols[0] as usize);
            let expected = [m.pc, m.vc, m.offset, m.home].map(|v| v as u64);
            if cols[1..5] != expected {
                return Err(ParseError::new(
                    lineno,
                    format!(
                        "placement of file {} is {:?}, layout rule gives {:?}",
                        cols[0],
                        &cols[1..5],
                        expected
                    ),
                ));
            }
        }
        Ok(layout)
    }
}

pub(crate) fn parse_u64_columns(line: &str, want: usize, lineno: usize) -> Result<Vec<u64>, ParseError> {
    let cols = line
        .split_whitespace()
        .map(|s| s.parse::<u64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| ParseError::new(lineno, e.to_string()))?;
    if cols.len() != want {
        return Err(ParseError::new(
            lineno,
            format!("expected {want} columns, found {}", cols.len()),
        ));
    }
    Ok(cols)
}
