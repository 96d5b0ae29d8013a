use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv::{parse_list, KvDoc};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputNonlinearity {
    Sigmoid,
    Relu,
}

impl fmt::Display for OutputNonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputNonlinearity::Sigmoid => "sigmoid",
            OutputNonlinearity::Relu => "relu",
        })
    }
}

impl FromStr for OutputNonlinearity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sigmoid" => Ok(OutputNonlinearity::Sigmoid),
            "relu" => Ok(OutputNonlinearity::Relu),
            other => Err(format!("unknown output nonlinearity `{other}`")),
        }
    }
}

/// Architecture of a composite Conv-LSTM encoder-decoder.
///
/// The default is the 64x64 configuration: 4x4 patch grid (16 patches), 5x5
/// filters, five input and five output frames, sigmoid output. The default
/// `layer_channels` of `[32, 16, 16]` is a desk-scale choice; for full-size
/// models the per-layer counts should sum to 512.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    /// Side length `S` of the square grayscale input frames.
    pub frame_size: usize,
    pub input_len: usize,
    pub output_len: usize,
    /// The frame is split into `patch_factor x patch_factor` patches, stacked as channels.
    pub patch_factor: usize,
    pub filter_size: usize,
    pub layer_channels: Vec<usize>,
    /// Feed each predicted frame back as the next future-decoder input.
    pub conditioned: bool,
    /// `false` builds the future-only baseline without a past decoder.
    pub composite: bool,
    pub output_nonlinearity: OutputNonlinearity,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            frame_size: 64,
            input_len: 5,
            output_len: 5,
            patch_factor: 4,
            filter_size: 5,
            layer_channels: vec![32, 16, 16],
            conditioned: false,
            composite: true,
            output_nonlinearity: OutputNonlinearity::Sigmoid,
        }
    }
}

pub const NETWORK_KEYS: &[&str] = &[
    "frame_size",
    "input_len",
    "output_len",
    "patch_factor",
    "filter_size",
    "layer_channels",
    "conditioned",
    "composite",
    "output_nonlinearity",
];

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_size == 0 || self.patch_factor == 0 {
            return Err(Error::config("frame_size and patch_factor must be positive"));
        }
        if self.frame_size % self.patch_factor != 0 {
            return Err(Error::config(format!(
                "frame_size {} is not divisible by patch_factor {}",
                self.frame_size, self.patch_factor
            )));
        }
        if self.filter_size % 2 == 0 {
            return Err(Error::config(format!("filter_size {} must be odd", self.filter_size)));
        }
        if self.layer_channels.is_empty() || self.layer_channels.contains(&0) {
            return Err(Error::config("need at least one layer, each with >= 1 channel"));
        }
        if self.input_len == 0 || self.output_len == 0 {
            return Err(Error::config("input_len and output_len must be >= 1"));
        }
        Ok(())
    }

    /// Channels of a patchified frame.
    pub fn frame_channels(&self) -> usize {
        self.patch_factor * self.patch_factor
    }

    /// Spatial side of the patch-grid feature maps.
    pub fn map_size(&self) -> usize {
        self.frame_size / self.patch_factor
    }

    pub fn window_len(&self) -> usize {
        self.input_len + self.output_len
    }

    pub fn num_layers(&self) -> usize {
        self.layer_channels.len()
    }

    pub fn layer_input_channels(&self, layer: usize) -> usize {
        if layer == 0 {
            self.frame_channels()
        } else {
            self.layer_channels[layer - 1]
        }
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        self.write_kv(&mut doc);
        doc
    }

    pub(crate) fn write_kv(&self, doc: &mut KvDoc) {
        doc.set("frame_size", self.frame_size);
        doc.set("input_len", self.input_len);
        doc.set("output_len", self.output_len);
        doc.set("patch_factor", self.patch_factor);
        doc.set("filter_size", self.filter_size);
        let ch: Vec<String> = self.layer_channels.iter().map(|c| c.to_string()).collect();
        doc.set("layer_channels", ch.join(","));
        doc.set("conditioned", self.conditioned);
        doc.set("composite", self.composite);
        doc.set("output_nonlinearity", self.output_nonlinearity);
    }

    /// Read the network keys from `doc`, falling back to defaults; ignores other keys.
    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        let d = NetworkConfig::default();
        let cfg = NetworkConfig {
            frame_size: doc.parse_or("frame_size", d.frame_size)?,
            input_len: doc.parse_or("input_len", d.input_len)?,
            output_len: doc.parse_or("output_len", d.output_len)?,
            patch_factor: doc.parse_or("patch_factor", d.patch_factor)?,
            filter_size: doc.parse_or("filter_size", d.filter_size)?,
            layer_channels: match doc.get("layer_channels") {
                Some(v) => parse_list("layer_channels", v)?,
                None => d.layer_channels,
            },
            conditioned: doc.parse_or("conditioned", d.conditioned)?,
            composite: doc.parse_or("composite", d.composite)?,
            output_nonlinearity: doc.parse_or("output_nonlinearity", d.output_nonlinearity)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
