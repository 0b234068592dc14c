//! Writes a synthetic bank as SURB and CSV, reads both back and checks they
//! agree. Also shows how a corrupt file is reported.

use sur::bank::{decode_surb, encode_surb};
use sur::cli::bank_summary;
use sur::{load_bank, make_synthetic_bank, save_bank, SyntheticSpec};

fn main() -> sur::Result<()> {
    let dir = std::env::temp_dir().join(format!("sur-bank-formats-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| sur::Error::Format(e.to_string()))?;

    let spec = SyntheticSpec { n_domains: 2, classes_per_domain: 4, items_per_class: 3, dim: 6, ..Default::default() };
    let bank = make_synthetic_bank(&spec)?.remove(0);

    let surb = dir.join("domain_0.surb");
    let csv = dir.join("domain_0.csv");
    save_bank(&bank, &surb)?;
    save_bank(&bank, &csv)?;
    print!("{}", bank_summary(&load_bank(&surb)?));

    let from_csv = load_bank(&csv)?;
    println!("CSV and SURB decode to the same bank: {}", from_csv == load_bank(&surb)?);

    let mut bytes = encode_surb(&bank)?;
    println!("SURB size: {} bytes", bytes.len());
    bytes.truncate(40);
    println!("truncated: {}", decode_surb(&bytes).unwrap_err());
    bytes[0] = b'X';
    println!("bad magic: {}", decode_surb(&bytes).unwrap_err());

    let _ = std::fs::remove_dir_all(&dir);
    Ok(())
}
