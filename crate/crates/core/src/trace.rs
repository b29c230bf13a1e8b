//! Frame and batch trace records and their JSON Lines encoding.
//!
//! Line 1 of a trace is the header `{"format":"gamorra-trace","version":1}`;
//! every following line is one [`FrameRecord`]. Shader sources travel next to
//! the trace as a directory of `<shader-id>.il` files.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::il::{parse_program, ShaderProgram};
use crate::{Error, Result, Stage};

pub const TRACE_FORMAT: &str = "gamorra-trace";
pub const TRACE_VERSION: u32 = 1;

fn is_false(b: &bool) -> bool {
    !*b
}

/// One rendering batch. Drawcalls sharing a pipeline state arrive pre-merged.
/// An absent shader id means the stage is pass-through or inactive.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchRecord {
    pub ia_bytes: u64,
    pub vertex_count: u64,
    pub attr_count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vs_shader: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hs_shader: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pcf_shader: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ds_shader: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gs_shader: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ps_shader: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cs_shader: Option<String>,
    pub patch_count: u64,
    pub tess_points_per_patch: Vec<u64>,
    pub ds_vertex_count: u64,
    pub gs_vertex_count: u64,
    pub fragment_count: u64,
    pub rt_width: u32,
    pub rt_height: u32,
    pub cs_input_count: u64,
    /// Indexed draw; subject to the post-transform cache on real hardware.
    #[serde(default, skip_serializing_if = "is_false")]
    pub indexed: bool,
    /// Depth-only pass; subject to early-z culling.
    #[serde(default, skip_serializing_if = "is_false")]
    pub depth_only: bool,
}

impl BatchRecord {
    pub fn shader(&self, stage: Stage) -> Option<&str> {
        match stage {
            Stage::Vs => self.vs_shader.as_deref(),
            Stage::Hs => self.hs_shader.as_deref(),
            Stage::Pcf => self.pcf_shader.as_deref(),
            Stage::Ds => self.ds_shader.as_deref(),
            Stage::Gs => self.gs_shader.as_deref(),
            Stage::Ps => self.ps_shader.as_deref(),
            Stage::Cs => self.cs_shader.as_deref(),
            _ => None,
        }
    }

    pub fn shaders(&self) -> impl Iterator<Item = (Stage, &str)> {
        [
            Stage::Vs,
            Stage::Hs,
            Stage::Pcf,
            Stage::Ds,
            Stage::Gs,
            Stage::Ps,
            Stage::Cs,
        ]
        .into_iter()
        .filter_map(move |s| self.shader(s).map(|id| (s, id)))
    }

    pub fn tessellation_active(&self) -> bool {
        self.hs_shader.is_some()
    }

    /// Checks the per-batch invariants, returning a description of the first
    /// violation.
    pub fn check(&self) -> std::result::Result<(), String> {
        if self.tess_points_per_patch.len() as u64 != self.patch_count {
            return Err(format!(
                "tess list length mismatch: patch_count {} but {} entries",
                self.patch_count,
                self.tess_points_per_patch.len()
            ));
        }
        if self.fragment_count > 0 && (self.rt_width == 0 || self.rt_height == 0) {
            return Err("render target must be at least 1x1 when fragments are produced".into());
        }
        if self.hs_shader.is_some() && (self.pcf_shader.is_none() || self.ds_shader.is_none()) {
            return Err("hs_shader requires pcf_shader and ds_shader".into());
        }
        if let Some((stage, _)) = self.shaders().find(|(_, id)| id.is_empty()) {
            return Err(format!("empty {stage} shader id"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub frame_index: u64,
    /// Batches in render order.
    pub batches: Vec<BatchRecord>,
}

/// A trace plus the shader sources it references.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameSequence {
    pub frames: Vec<FrameRecord>,
    /// Shader id to IL source text.
    pub shader_store: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
}

impl FrameSequence {
    pub fn validate(&self) -> Result<()> {
        let mut last = None;
        for (fi, frame) in self.frames.iter().enumerate() {
            check_frame(frame, last).map_err(|msg| Error::TraceParse { line: fi + 2, msg })?;
            last = Some(frame.frame_index);
            self.check_shaders(frame)?;
        }
        self.programs().map(|_| ())
    }

    fn check_shaders(&self, frame: &FrameRecord) -> Result<()> {
        for batch in &frame.batches {
            for (_, id) in batch.shaders() {
                if !self.shader_store.contains_key(id) {
                    return Err(Error::UnresolvedShader(id.to_string()));
                }
            }
        }
        Ok(())
    }

    /// Parses every stored shader. A stored shader with no executable
    /// instruction is an error.
    pub fn programs(&self) -> Result<BTreeMap<String, ShaderProgram>> {
        self.shader_store
            .iter()
            .map(|(id, src)| {
                let p = parse_program(id, src)?;
                if p.is_empty() {
                    return Err(Error::InvalidConfig(format!(
                        "shader `{id}` has no executable instruction"
                    )));
                }
                Ok((id.clone(), p))
            })
            .collect()
    }

    /// True when any batch dispatches a compute shader.
    pub fn uses_compute(&self) -> bool {
        self.frames
            .iter()
            .flat_map(|f| &f.batches)
            .any(|b| b.cs_shader.is_some())
    }
}

fn check_frame(frame: &FrameRecord, last: Option<u64>) -> std::result::Result<(), String> {
    if let Some(prev) = last {
        if frame.frame_index <= prev {
            return Err(format!(
                "frame_index {} is not greater than previous {prev}",
                frame.frame_index
            ));
        }
    }
    for (bi, batch) in frame.batches.iter().enumerate() {
        batch.check().map_err(|m| format!("batch {bi}: {m}"))?;
    }
    Ok(())
}

/// Reads a trace stream and validates it against `shader_store`.
pub fn parse_trace<R: BufRead>(
    reader: R,
    shader_store: BTreeMap<String, String>,
) -> Result<FrameSequence> {
    let mut frames: Vec<FrameRecord> = Vec::new();
    let mut seen_header = false;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::TraceParse { line: line_no, msg };
        if !seen_header {
            let header: Header = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
            if header.format != TRACE_FORMAT || header.version != TRACE_VERSION {
                return Err(err(format!(
                    "unsupported trace header {}/{}",
                    header.format, header.version
                )));
            }
            seen_header = true;
            continue;
        }
        let frame: FrameRecord = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        check_frame(&frame, frames.last().map(|f| f.frame_index)).map_err(err)?;
        frames.push(frame);
    }
    let seq = FrameSequence {
        frames,
        shader_store,
    };
    for frame in &seq.frames {
        seq.check_shaders(frame)?;
    }
    seq.programs()?;
    Ok(seq)
}

/// Writes the header and one line per frame. Returns the number of bytes
/// written.
pub fn write_trace<W: Write>(seq: &FrameSequence, mut sink: W) -> Result<usize> {
    let mut written = 0;
    let header = serde_json::to_string(&Header {
        format: TRACE_FORMAT.to_string(),
        version: TRACE_VERSION,
    })?;
    sink.write_all(header.as_bytes())?;
    sink.write_all(b"\n")?;
    written += header.len() + 1;
    for frame in &seq.frames {
        let line = serde_json::to_string(frame)?;
        sink.write_all(line.as_bytes())?;
        sink.write_all(b"\n")?;
        written += line.len() + 1;
    }
    sink.flush()?;
    Ok(written)
}

pub fn read_shader_store(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut store = BTreeMap::new();
    if !dir.exists() {
        return Ok(store);
    }
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("il") {
            continue;
        }
        if let Some(id) = path.file_stem().and_then(|s| s.to_str()) {
            store.insert(id.to_string(), fs::read_to_string(&path)?);
        }
    }
    Ok(store)
}

pub fn write_shader_store(store: &BTreeMap<String, String>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (id, src) in store {
        fs::write(dir.join(format!("{id}.il")), src)?;
    }
    Ok(())
}

/// Loads a trace file together with its shader directory.
pub fn load_sequence(trace: &Path, shader_dir: &Path) -> Result<FrameSequence> {
    let store = read_shader_store(shader_dir)?;
    let file = fs::File::open(trace)?;
    parse_trace(std::io::BufReader::new(file), store)
}
