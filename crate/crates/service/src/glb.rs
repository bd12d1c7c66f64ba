//! Binary glTF 2.0 with one triangle mesh and a per-vertex `_DISPLACEMENT`
//! scalar attribute.

use serde_json::json;

const MAGIC: u32 = 0x4654_6C67;
const CHUNK_JSON: u32 = 0x4E4F_534A;
const CHUNK_BIN: u32 = 0x004E_4942;
const FLOAT: u32 = 5126;
const UNSIGNED_INT: u32 = 5125;
const ARRAY_BUFFER: u32 = 34962;
const ELEMENT_ARRAY_BUFFER: u32 = 34963;

pub fn write_glb(positions: &[[f64; 3]], faces: &[[usize; 3]], displacement: &[f64]) -> Vec<u8> {
    assert_eq!(positions.len(), displacement.len(), "one displacement per vertex");
    let n = positions.len();
    let mut bin = Vec::with_capacity(n * 16 + faces.len() * 12);
    let (mut lo, mut hi) = ([f32::INFINITY; 3], [f32::NEG_INFINITY; 3]);
    for p in positions {
        for d in 0..3 {
            let v = p[d] as f32;
            lo[d] = lo[d].min(v);
            hi[d] = hi[d].max(v);
            bin.extend_from_slice(&v.to_le_bytes());
        }
    }
    let index_offset = bin.len();
    for f in faces {
        for &i in f {
            bin.extend_from_slice(&(i as u32).to_le_bytes());
        }
    }
    let disp_offset = bin.len();
    for &d in displacement {
        bin.extend_from_slice(&(d as f32).to_le_bytes());
    }
    let total = bin.len();
    if n == 0 {
        (lo, hi) = ([0.0; 3], [0.0; 3]);
    }

    let doc = json!({
        "asset": {"version": "2.0", "generator": "cranio"},
        "scene": 0,
        "scenes": [{"nodes": [0]}],
        "nodes": [{"mesh": 0}],
        "meshes": [{"primitives": [{
            "attributes": {"POSITION": 0, "_DISPLACEMENT": 2},
            "indices": 1,
            "mode": 4
        }]}],
        "buffers": [{"byteLength": total}],
        "bufferViews": [
            {"buffer": 0, "byteOffset": 0, "byteLength": index_offset, "target": ARRAY_BUFFER},
            {"buffer": 0, "byteOffset": index_offset, "byteLength": disp_offset - index_offset, "target": ELEMENT_ARRAY_BUFFER},
            {"buffer": 0, "byteOffset": disp_offset, "byteLength": total - disp_offset, "target": ARRAY_BUFFER}
        ],
        "accessors": [
            {"bufferView": 0, "componentType": FLOAT, "count": n, "type": "VEC3", "min": lo, "max": hi},
            {"bufferView": 1, "componentType": UNSIGNED_INT, "count": faces.len() * 3, "type": "SCALAR"},
            {"bufferView": 2, "componentType": FLOAT, "count": n, "type": "SCALAR"}
        ]
    });
    let mut json = serde_json::to_vec(&doc).expect("static document");
    while !json.len().is_multiple_of(4) {
        json.push(b' ');
    }
    while bin.len() % 4 != 0 {
        bin.push(0);
    }
    let length = 12 + 8 + json.len() + 8 + bin.len();
    let mut out = Vec::with_capacity(length);
    for word in [MAGIC, 2, length as u32, json.len() as u32, CHUNK_JSON] {
        out.extend_from_slice(&word.to_le_bytes());
    }
    out.extend_from_slice(&json);
    for word in [bin.len() as u32, CHUNK_BIN] {
        out.extend_from_slice(&word.to_le_bytes());
    }
    out.extend_from_slice(&bin);
    out
}
