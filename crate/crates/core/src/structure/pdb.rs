//! Fixed-width PDB (v3.3) ATOM record reader and writer.
//!
//! Only the subset needed for backbones is read:
//!
//! | Columns | Field                 |
//! |---------|-----------------------|
//! | 1-6     | record name `ATOM  `  |
//! | 13-16   | atom name             |
//! | 17      | alternate location    |
//! | 18-20   | residue name          |
//! | 22      | chain identifier      |
//! | 23-26   | residue sequence no.  |
//! | 27      | insertion code        |
//! | 31-54   | x, y, z (8.3 each)    |
//!
//! HETATM records, alternate locations other than blank/`A` and residues with
//! insertion codes are skipped. Reading stops at the first `ENDMDL`.
//! Coordinates are parsed at single precision and widened, so a backbone read
//! from PDB text survives the f32 backbone container unchanged.

use std::fmt::Write as _;

use super::{imputed, AminoAcid, ProteinBackbone, Residue, StructureError, Vec3};

struct PendingResidue {
    chain: char,
    seq_index: i32,
    name: String,
    n: Option<Vec3>,
    ca: Option<Vec3>,
    c: Option<Vec3>,
    o: Option<Vec3>,
}

impl PendingResidue {
    fn finish(self) -> Option<(char, Residue)> {
        let ca = self.ca?;
        let mut flags = 0;
        let mut take = |v: Option<Vec3>, bit: u8| {
            v.unwrap_or_else(|| {
                flags |= bit;
                ca
            })
        };
        let n = take(self.n, imputed::N);
        let c = take(self.c, imputed::C);
        let o = take(self.o, imputed::O);
        Some((
            self.chain,
            Residue {
                aa: AminoAcid::from_three_letter(&self.name),
                n,
                ca,
                c,
                o,
                seq_index: self.seq_index,
                imputed: flags,
            },
        ))
    }
}

fn field(line: &str, start: usize, end: usize) -> &str {
    line.get(start..end.min(line.len())).unwrap_or("")
}

/// Parses the residues of `chain` from ATOM records.
pub fn parse_pdb(text: &str, chain: &str) -> Result<ProteinBackbone, StructureError> {
    let want = chain.trim();
    let mut chains_seen: Vec<char> = Vec::new();
    let mut finished: Vec<(char, Residue)> = Vec::new();
    let mut current: Option<PendingResidue> = None;
    let mut atom_records = 0usize;

    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        if line.starts_with("ENDMDL") && atom_records > 0 {
            break;
        }
        if !line.starts_with("ATOM  ") {
            continue;
        }
        let err = |message: String| StructureError::Parse {
            line: line_no,
            message,
        };
        if !line.is_ascii() {
            return Err(err("non-ASCII ATOM record".into()));
        }
        if line.len() < 54 {
            return Err(err(format!(
                "ATOM record has {} columns, need at least 54",
                line.len()
            )));
        }
        atom_records += 1;

        let bytes = line.as_bytes();
        let altloc = bytes[16] as char;
        let chain_id = bytes[21] as char;
        let icode = bytes[26] as char;
        if !chains_seen.contains(&chain_id) {
            chains_seen.push(chain_id);
        }
        if altloc != ' ' && altloc != 'A' {
            continue;
        }
        if icode != ' ' {
            continue;
        }

        let atom_name = field(line, 12, 16).trim();
        let res_name = field(line, 17, 20).trim();
        let seq_index: i32 = field(line, 22, 26)
            .trim()
            .parse()
            .map_err(|_| err(format!("bad residue number {:?}", field(line, 22, 26))))?;
        let mut xyz = [0.0f64; 3];
        for (k, start) in [30usize, 38, 46].into_iter().enumerate() {
            let raw = field(line, start, start + 8);
            let v: f32 = raw
                .trim()
                .parse()
                .map_err(|_| err(format!("bad coordinate {raw:?}")))?;
            if !v.is_finite() {
                return Err(err(format!("non-finite coordinate {raw:?}")));
            }
            xyz[k] = f64::from(v);
        }
        let pos = Vec3::new(xyz[0], xyz[1], xyz[2]);

        let same = current
            .as_ref()
            .is_some_and(|r| r.chain == chain_id && r.seq_index == seq_index && r.name == res_name);
        if !same {
            if let Some(done) = current.take().and_then(PendingResidue::finish) {
                finished.push(done);
            }
            current = Some(PendingResidue {
                chain: chain_id,
                seq_index,
                name: res_name.to_string(),
                n: None,
                ca: None,
                c: None,
                o: None,
            });
        }
        let r = current.as_mut().expect("current residue");
        let slot = match atom_name {
            "N" => &mut r.n,
            "CA" => &mut r.ca,
            "C" => &mut r.c,
            "O" => &mut r.o,
            _ => continue,
        };
        if slot.is_none() {
            *slot = Some(pos);
        }
    }
    if let Some(done) = current.take().and_then(PendingResidue::finish) {
        finished.push(done);
    }

    if atom_records == 0 {
        return Err(StructureError::Parse {
            line: 0,
            message: "no ATOM records".into(),
        });
    }
    let want_char = want.chars().next().unwrap_or(' ');
    if want.chars().count() > 1 || !chains_seen.contains(&want_char) {
        return Err(StructureError::ChainNotFound {
            chain: want.to_string(),
            available: chains_seen.iter().map(|c| c.to_string()).collect(),
        });
    }
    let residues: Vec<Residue> = finished
        .into_iter()
        .filter(|(c, _)| *c == want_char)
        .map(|(_, r)| r)
        .collect();
    if residues.is_empty() {
        return Err(StructureError::EmptyBackbone(want.to_string()));
    }
    Ok(ProteinBackbone {
        chain_id: want_char.to_string(),
        residues,
    })
}

/// Writes ATOM records for the backbone. Imputed atoms are omitted, so the
/// output parses back to the same backbone (coordinates at 3 decimals).
pub fn to_pdb(b: &ProteinBackbone) -> String {
    let chain = b.chain_id.chars().next().unwrap_or('A');
    let mut out = String::new();
    let mut serial = 1;
    for r in &b.residues {
        let atoms = [
            (" N  ", &r.n, imputed::N, "N"),
            (" CA ", &r.ca, 0, "C"),
            (" C  ", &r.c, imputed::C, "C"),
            (" O  ", &r.o, imputed::O, "O"),
        ];
        for (name, x, bit, element) in atoms {
            if r.imputed & bit != 0 {
                continue;
            }
            let _ = writeln!(
                out,
                "ATOM  {:>5} {} {:>3} {}{:>4}    {:>8.3}{:>8.3}{:>8.3}{:>6.2}{:>6.2}          {:>2}",
                serial % 100_000,
                name,
                r.aa.three_letter(),
                chain,
                r.seq_index,
                x.x,
                x.y,
                x.z,
                1.0,
                0.0,
                element
            );
            serial += 1;
        }
    }
    out.push_str("TER\nEND\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const ALA_GLY: &str = "\
ATOM      1  N   ALA A   1      11.104   6.134  -6.504  1.00  0.00           N
ATOM      2  CA  ALA A   1      11.639   6.071  -5.147  1.00  0.00           C
ATOM      3  C   ALA A   1      13.149   5.889  -5.237  1.00  0.00           C
ATOM      4  O   ALA A   1      13.716   5.261  -6.124  1.00  0.00           O
ATOM      5  N   GLY A   2      13.804   6.459  -4.229  1.00  0.00           N
ATOM      6  CA  GLY A   2      15.253   6.359  -4.155  1.00  0.00           C
ATOM      7  C   GLY A   2      15.759   5.053  -3.565  1.00  0.00           C
ATOM      8  O   GLY A   2      15.023   4.292  -2.938  1.00  0.00           O
END
";

    #[test]
    fn parses_two_residue_fixture() {
        let b = parse_pdb(ALA_GLY, "A").unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b.sequence(), vec![AminoAcid::Ala, AminoAcid::Gly]);
        assert_eq!(
            b.residues[0].ca,
            Vec3::new(11.639f32 as f64, 6.071f32 as f64, -5.147f32 as f64)
        );
        assert_eq!(b.residues[1].o.z, -2.938f32 as f64);
        assert_eq!(b.seq_indices(), vec![1, 2]);
        assert!(b.residues.iter().all(|r| r.imputed == 0));
    }

    #[test]
    fn residue_without_ca_is_dropped() {
        let text: String = ALA_GLY
            .lines()
            .filter(|l| !(l.contains(" CA ") && l.contains("GLY")))
            .map(|l| format!("{l}\n"))
            .collect();
        let b = parse_pdb(&text, "A").unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b.residues[0].aa, AminoAcid::Ala);
    }

    #[test]
    fn missing_oxygen_is_imputed_from_ca() {
        let text: String = ALA_GLY
            .lines()
            .filter(|l| !l.starts_with("ATOM      8"))
            .map(|l| format!("{l}\n"))
            .collect();
        let b = parse_pdb(&text, "A").unwrap();
        assert_eq!(b.residues[1].imputed, imputed::O);
        assert_eq!(b.residues[1].o, b.residues[1].ca);
    }

    #[test]
    fn empty_and_garbled_inputs() {
        assert!(matches!(
            parse_pdb("", "A"),
            Err(StructureError::Parse { .. })
        ));
        assert!(matches!(
            parse_pdb("HELLO WORLD\n", "A"),
            Err(StructureError::Parse { .. })
        ));
        let garbled = ALA_GLY.replace("11.104", "11.x04");
        assert!(matches!(
            parse_pdb(&garbled, "A"),
            Err(StructureError::Parse { line: 1, .. })
        ));
        let short = "ATOM      1  N   ALA A   1      11.104\n";
        assert!(matches!(
            parse_pdb(short, "A"),
            Err(StructureError::Parse { .. })
        ));
    }

    #[test]
    fn absent_chain_and_empty_chain() {
        assert!(matches!(
            parse_pdb(ALA_GLY, "B"),
            Err(StructureError::ChainNotFound { .. })
        ));
        let no_ca: String = ALA_GLY
            .lines()
            .filter(|l| !l.contains(" CA "))
            .map(|l| format!("{l}\n"))
            .collect();
        assert!(matches!(
            parse_pdb(&no_ca, "A"),
            Err(StructureError::EmptyBackbone(_))
        ));
    }

    #[test]
    fn nonstandard_residue_becomes_unk_and_hetatm_is_skipped() {
        let text = ALA_GLY.replace("ALA A   1", "MSE A   1");
        let b = parse_pdb(&text, "A").unwrap();
        assert_eq!(b.residues[0].aa, AminoAcid::Unk);

        let het = ALA_GLY
            .replace("ATOM      5", "HETATM    5")
            .replace("ATOM      6", "HETATM    6");
        let b = parse_pdb(&het, "A").unwrap();
        // GLY lost its N and CA; the remaining C/O records have no CA.
        assert_eq!(b.len(), 1);
    }

    #[test]
    fn altloc_and_insertion_codes() {
        let mut text = String::from(ALA_GLY);
        // Alternate location B of the Gly CA is ignored.
        text = text.replace("ATOM      6  CA  GLY", "ATOM      6  CA BGLY");
        let b = parse_pdb(&text, "A").unwrap();
        assert_eq!(b.len(), 1);
        // Insertion-coded residue is skipped entirely.
        let ins = ALA_GLY.replace("GLY A   2 ", "GLY A   2A");
        let b = parse_pdb(&ins, "A").unwrap();
        assert_eq!(b.len(), 1);
    }

    #[test]
    fn stops_after_first_model() {
        let text = format!(
            "MODEL        1\n{}ENDMDL\nMODEL        2\n{}ENDMDL\n",
            ALA_GLY.replace("END\n", ""),
            ALA_GLY.replace("END\n", "")
        );
        let b = parse_pdb(&text, "A").unwrap();
        assert_eq!(b.len(), 2);
    }

    #[test]
    fn writer_round_trip() {
        let b = parse_pdb(ALA_GLY, "A").unwrap();
        let text = to_pdb(&b);
        assert_eq!(parse_pdb(&text, "A").unwrap(), b);
    }
}
