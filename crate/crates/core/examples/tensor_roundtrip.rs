//! Writes a small tensor, reads it back and prints the header bytes.
use ndarray::array;
use vlseg3d::tensorio::{read_tensor, write_tensor, TensorFile};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("vlseg3d_tensor_example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("points.tnsr");

    let t = TensorFile::from_array(&array![[0.0f32, 1.5, -2.25], [0.001, 65504.0, -0.0]]);
    write_tensor(&path, &t)?;
    let back = read_tensor(&path)?;
    assert_eq!(back, t);

    let bytes = std::fs::read(&path)?;
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    println!("magic   {:?}", std::str::from_utf8(&bytes[..4]).unwrap());
    println!("header  {}", std::str::from_utf8(&bytes[16..16 + header_len]).unwrap());
    println!("payload {} bytes, shape {:?}", bytes.len() - 16 - header_len, back.shape());
    println!("{:?}", back.into_array2()?);
    Ok(())
}
