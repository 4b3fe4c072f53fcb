//! Binary tensor files: a small header (dtype, rank, dims) followed by the
//! row-major payload, all little-endian.
//!
//! Layout: magic `STNR`, u32 dtype code (0=f32, 1=f64, 2=i32, 3=i64),
//! u32 rank, rank x u64 dims, then the payload.

use std::io::{self, Read, Write};

use super::{SimError, Tensor, TensorData};

const MAGIC: &[u8; 4] = b"STNR";

fn dtype_code(data: &TensorData) -> u32 {
    match data {
        TensorData::F32(_) => 0,
        TensorData::F64(_) => 1,
        TensorData::I32(_) => 2,
        TensorData::I64(_) => 3,
    }
}

pub fn write_tensor(w: &mut impl Write, tensor: &Tensor) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&dtype_code(&tensor.data).to_le_bytes())?;
    // The stored shape carries lane width folded into the innermost
    // dimension so the file stays a plain scalar tensor.
    let mut dims = tensor.shape.clone();
    if tensor.width > 1 {
        if let Some(last) = dims.last_mut() {
            *last *= tensor.width as u64;
        } else {
            dims.push(tensor.width as u64);
        }
    }
    w.write_all(&(dims.len() as u32).to_le_bytes())?;
    for d in &dims {
        w.write_all(&d.to_le_bytes())?;
    }
    match &tensor.data {
        TensorData::F32(v) => {
            for x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        TensorData::F64(v) => {
            for x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        TensorData::I32(v) => {
            for x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        TensorData::I64(v) => {
            for x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_tensor(r: &mut impl Read) -> Result<Tensor, SimError> {
    let bad = |msg: &str| SimError::Graph(format!("tensor file: {msg}"));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| bad(&e.to_string()))?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf).map_err(|e| bad(&e.to_string()))?;
    let dtype = u32::from_le_bytes(u32buf);
    r.read_exact(&mut u32buf).map_err(|e| bad(&e.to_string()))?;
    let rank = u32::from_le_bytes(u32buf) as usize;
    if rank > 8 {
        return Err(bad("rank too large"));
    }
    let mut dims = Vec::with_capacity(rank);
    let mut u64buf = [0u8; 8];
    for _ in 0..rank {
        r.read_exact(&mut u64buf).map_err(|e| bad(&e.to_string()))?;
        dims.push(u64::from_le_bytes(u64buf));
    }
    let count = dims.iter().product::<u64>().max(1) as usize;
    let data = match dtype {
        0 => {
            let mut v = Vec::with_capacity(count);
            for _ in 0..count {
                r.read_exact(&mut u32buf).map_err(|e| bad(&e.to_string()))?;
                v.push(f32::from_le_bytes(u32buf));
            }
            TensorData::F32(v)
        }
        1 => {
            let mut v = Vec::with_capacity(count);
            for _ in 0..count {
                r.read_exact(&mut u64buf).map_err(|e| bad(&e.to_string()))?;
                v.push(f64::from_le_bytes(u64buf));
            }
            TensorData::F64(v)
        }
        2 => {
            let mut v = Vec::with_capacity(count);
            for _ in 0..count {
                r.read_exact(&mut u32buf).map_err(|e| bad(&e.to_string()))?;
                v.push(i32::from_le_bytes(u32buf));
            }
            TensorData::I32(v)
        }
        3 => {
            let mut v = Vec::with_capacity(count);
            for _ in 0..count {
                r.read_exact(&mut u64buf).map_err(|e| bad(&e.to_string()))?;
                v.push(i64::from_le_bytes(u64buf));
            }
            TensorData::I64(v)
        }
        other => return Err(bad(&format!("unknown dtype code {other}"))),
    };
    Ok(Tensor {
        shape: dims,
        width: 1,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let tensor = Tensor::from_f32(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &tensor).unwrap();
        let back = read_tensor(&mut buf.as_slice()).unwrap();
        assert_eq!(tensor, back);
    }

    #[test]
    fn vector_width_folds_into_innermost_dim() {
        let tensor = Tensor {
            shape: vec![2],
            width: 2,
            data: TensorData::F32(vec![1.0, 2.0, 3.0, 4.0]),
        };
        let mut buf = Vec::new();
        write_tensor(&mut buf, &tensor).unwrap();
        let back = read_tensor(&mut buf.as_slice()).unwrap();
        assert_eq!(back.shape, vec![4]);
        assert_eq!(back.data, tensor.data);
    }
}
