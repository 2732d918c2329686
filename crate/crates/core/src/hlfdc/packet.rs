//! Little-endian wire format for exchanged feature maps.
//!
//! Header layout (74 bytes):
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic (`HLFD` packet, `BEVF` raw map)   |
//! | 4      | 2    | version (u16)                           |
//! | 6      | 2    | sender id (u16)                         |
//! | 8      | 4    | frame id (u32)                          |
//! | 12     | 2    | window `M` (u16)                        |
//! | 14     | 2    | `X` (u16)                               |
//! | 16     | 2    | `Y` (u16)                               |
//! | 18     | 2    | `C` (u16)                               |
//! | 20     | 52   | pose: 9 × R, 3 × T, 1 × H (f32)         |
//! | 72     | 2    | reserved, zero                          |
//!
//! The payload follows as f32 in `(row, col, channel)` order: the high band
//! then the low band for packets, or the whole map for raw messages.

use nalgebra::{Matrix3, Rotation3, Vector3};
use ndarray::Array3;

use crate::camera::CameraPose;
use crate::error::{Error, Result};

pub const PACKET_MAGIC: [u8; 4] = *b"HLFD";
pub const RAW_MAP_MAGIC: [u8; 4] = *b"BEVF";
pub const WIRE_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 74;

/// Pose as carried on the wire (single precision).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WirePose {
    pub rotation: [f32; 9],
    pub translation: [f32; 3],
    pub altitude: f32,
}

impl Default for WirePose {
    fn default() -> Self {
        Self {
            rotation: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            translation: [0.0; 3],
            altitude: 1.0,
        }
    }
}

impl From<&CameraPose> for WirePose {
    fn from(pose: &CameraPose) -> Self {
        let r = &pose.rotation;
        let mut rotation = [0.0f32; 9];
        for i in 0..3 {
            for j in 0..3 {
                rotation[i * 3 + j] = r[(i, j)] as f32;
            }
        }
        Self {
            rotation,
            translation: [
                pose.translation.x as f32,
                pose.translation.y as f32,
                pose.translation.z as f32,
            ],
            altitude: pose.altitude as f32,
        }
    }
}

impl WirePose {
    /// Recovers a validated pose, projecting the f32 rotation back onto SO(3).
    pub fn to_pose(&self) -> Result<CameraPose> {
        let raw = Matrix3::from_iterator(self.rotation.iter().map(|&v| v as f64)).transpose();
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::Protocol("non-finite pose in header".into()));
        }
        let rot = Rotation3::from_matrix_eps(&raw, 1e-12, 100, Rotation3::identity());
        let t = Vector3::new(
            self.translation[0] as f64,
            self.translation[1] as f64,
            self.translation[2] as f64,
        );
        CameraPose::new(*rot.matrix(), t, self.altitude as f64)
            .map_err(|e| Error::Protocol(format!("bad pose in header: {e}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PacketHeader {
    pub sender_id: u16,
    pub frame_id: u32,
    pub window: u16,
    pub x: u16,
    pub y: u16,
    pub channels: u16,
    pub pose: WirePose,
}

impl PacketHeader {
    pub fn new(sender_id: u16, frame_id: u32, window: u16, x: u16, y: u16, channels: u16, pose: WirePose) -> Result<Self> {
        if window == 0 || x % window != 0 || y % window != 0 {
            return Err(Error::Protocol(format!("{x}×{y} grid is not divisible by window {window}")));
        }
        if channels % 2 != 0 {
            return Err(Error::Protocol(format!("channel count {channels} must be even")));
        }
        Ok(Self {
            sender_id,
            frame_id,
            window,
            x,
            y,
            channels,
            pose,
        })
    }

    fn write(&self, magic: [u8; 4], out: &mut Vec<u8>) {
        out.extend_from_slice(&magic);
        out.extend_from_slice(&WIRE_VERSION.to_le_bytes());
        out.extend_from_slice(&self.sender_id.to_le_bytes());
        out.extend_from_slice(&self.frame_id.to_le_bytes());
        for v in [self.window, self.x, self.y, self.channels] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let pose = &self.pose;
        for v in pose.rotation.iter().chain(&pose.translation).chain(std::iter::once(&pose.altitude)) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&[0, 0]);
    }

    fn read(bytes: &[u8], magic: [u8; 4]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Protocol(format!("{} bytes is shorter than a header", bytes.len())));
        }
        if bytes[0..4] != magic {
            return Err(Error::Protocol(format!("bad magic {:?}", &bytes[0..4])));
        }
        let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
        let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let version = u16_at(4);
        if version != WIRE_VERSION {
            return Err(Error::Protocol(format!("unsupported version {version}")));
        }
        if bytes[72..74] != [0, 0] {
            return Err(Error::Protocol("reserved header bytes are not zero".into()));
        }
        let mut rotation = [0.0f32; 9];
        for (i, r) in rotation.iter_mut().enumerate() {
            *r = f32_at(20 + 4 * i);
        }
        let pose = WirePose {
            rotation,
            translation: [f32_at(56), f32_at(60), f32_at(64)],
            altitude: f32_at(68),
        };
        Self::new(
            u16_at(6),
            u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")),
            u16_at(12),
            u16_at(14),
            u16_at(16),
            u16_at(18),
            pose,
        )
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.x as usize, self.y as usize, self.channels as usize)
    }
}

fn write_floats(data: &Array3<f32>, out: &mut Vec<u8>) {
    // Standard layout iteration is (row, col, channel).
    for v in data.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_floats(bytes: &[u8], shape: (usize, usize, usize)) -> Array3<f32> {
    let vals = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Array3::from_shape_vec(shape, vals).expect("length checked by caller")
}

/// One platform's encoded BEV features for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyPacket {
    pub header: PacketHeader,
    /// `X × Y × C/2`.
    pub high: Array3<f32>,
    /// `X/M × Y/M × C/2`.
    pub low: Array3<f32>,
}

impl FrequencyPacket {
    pub fn new(header: PacketHeader, high: Array3<f32>, low: Array3<f32>) -> Result<Self> {
        let (x, y, c) = header.dims();
        let m = header.window as usize;
        if high.dim() != (x, y, c / 2) || low.dim() != (x / m, y / m, c / 2) {
            return Err(Error::Protocol(format!(
                "bands {:?} / {:?} do not match header {x}×{y}×{c} window {m}",
                high.dim(),
                low.dim()
            )));
        }
        Ok(Self { header, high, low })
    }

    pub fn payload_floats(&self) -> usize {
        self.high.len() + self.low.len()
    }

    pub fn payload_bytes(&self) -> usize {
        4 * self.payload_floats()
    }

    pub fn byte_len(&self) -> usize {
        HEADER_LEN + self.payload_bytes()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.byte_len());
        self.header.write(PACKET_MAGIC, &mut out);
        write_floats(&self.high, &mut out);
        write_floats(&self.low, &mut out);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = PacketHeader::read(bytes, PACKET_MAGIC)?;
        let (x, y, c) = header.dims();
        let m = header.window as usize;
        let high_len = 4 * x * y * (c / 2);
        let low_len = 4 * (x / m) * (y / m) * (c / 2);
        if bytes.len() != HEADER_LEN + high_len + low_len {
            return Err(Error::Protocol(format!(
                "packet is {} bytes, header implies {}",
                bytes.len(),
                HEADER_LEN + high_len + low_len
            )));
        }
        let body = &bytes[HEADER_LEN..];
        let high = read_floats(&body[..high_len], (x, y, c / 2));
        let low = read_floats(&body[high_len..], (x / m, y / m, c / 2));
        Self::new(header, high, low)
    }
}

/// Uncompressed BEV map message; the header's window field is 1.
#[derive(Clone, Debug, PartialEq)]
pub struct RawMapMessage {
    pub header: PacketHeader,
    pub map: Array3<f32>,
}

impl RawMapMessage {
    pub fn new(header: PacketHeader, map: Array3<f32>) -> Result<Self> {
        if map.dim() != header.dims() {
            return Err(Error::Protocol(format!("map {:?} does not match header {:?}", map.dim(), header.dims())));
        }
        Ok(Self { header, map })
    }

    pub fn payload_bytes(&self) -> usize {
        4 * self.map.len()
    }

    pub fn byte_len(&self) -> usize {
        HEADER_LEN + self.payload_bytes()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.byte_len());
        self.header.write(RAW_MAP_MAGIC, &mut out);
        write_floats(&self.map, &mut out);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = PacketHeader::read(bytes, RAW_MAP_MAGIC)?;
        let shape = header.dims();
        let expected = HEADER_LEN + 4 * shape.0 * shape.1 * shape.2;
        if bytes.len() != expected {
            return Err(Error::Protocol(format!("raw map is {} bytes, header implies {expected}", bytes.len())));
        }
        Self::new(header, read_floats(&bytes[HEADER_LEN..], shape))
    }
}
