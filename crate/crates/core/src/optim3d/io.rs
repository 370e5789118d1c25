use std::io::{Read, Write};

use super::{Optim3dError, VoxelScene};

pub const SCENE_MAGIC: [u8; 4] = *b"MVVX";
pub const SCENE_VERSION: u32 = 1;

/// Layout, little-endian: magic, `u32` version, `u32` G, six `f32` for the
/// box (min xyz, max xyz), `G³` `f32` densities, then `G³` RGB triples
/// as `f32`; cells run x fastest, then y, then z.
pub fn write_scene<W: Write>(scene: &VoxelScene, mut w: W) -> Result<(), Optim3dError> {
    scene.validate()?;
    let io = |e: std::io::Error| Optim3dError::Io(e.to_string());
    let mut buf = Vec::with_capacity(36 + 16 * scene.cells());
    buf.extend_from_slice(&SCENE_MAGIC);
    buf.extend_from_slice(&SCENE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(scene.g as u32).to_le_bytes());
    for v in scene.bbox_min.iter().chain(&scene.bbox_max).chain(&scene.density).chain(&scene.color) {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    w.write_all(&buf).map_err(io)
}

pub fn read_scene<R: Read>(mut r: R) -> Result<VoxelScene, Optim3dError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf).map_err(|e| Optim3dError::Io(e.to_string()))?;
    let bad = |m: &str| Optim3dError::Format(m.to_string());
    if buf.len() < 12 || buf[..4] != SCENE_MAGIC {
        return Err(bad("missing magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().expect("4 bytes"));
    if u32_at(4) != SCENE_VERSION {
        return Err(bad("unsupported version"));
    }
    let g = u32_at(8) as usize;
    let cells = g
        .checked_mul(g)
        .and_then(|x| x.checked_mul(g))
        .ok_or_else(|| bad("grid too large"))?;
    let expect = 12 + 4 * (6 + 4 * cells);
    if buf.len() != expect {
        return Err(Optim3dError::Format(format!("expected {expect} bytes, found {}", buf.len())));
    }
    let floats: Vec<f64> = buf[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    let scene = VoxelScene {
        g,
        bbox_min: [floats[0], floats[1], floats[2]],
        bbox_max: [floats[3], floats[4], floats[5]],
        density: floats[6..6 + cells].to_vec(),
        color: floats[6 + cells..].to_vec(),
    };
    scene.validate()?;
    Ok(scene)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_rejects_truncation() {
        let mut s = VoxelScene::empty(3, [-1.0; 3], [1.0, 2.0, 1.0]);
        s.density[5] = 2.5;
        s.color[7] = 0.25;
        let mut bytes = Vec::new();
        write_scene(&s, &mut bytes).unwrap();
        assert_eq!(read_scene(&bytes[..]).unwrap(), s);
        assert!(matches!(read_scene(&bytes[..bytes.len() - 1]), Err(Optim3dError::Format(_))));
        assert!(read_scene(&b"XXXX"[..]).is_err());
    }
}
