use super::GeometryError;

/// Ten-way secondary-structure channel: nine DSSP-style states plus a
/// dedicated class for residues without an annotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SecondaryStructure {
    AlphaHelix,
    Bridge,
    Strand,
    Helix310,
    PiHelix,
    Turn,
    Bend,
    Polyproline,
    Coil,
    Unknown,
}

impl SecondaryStructure {
    pub const COUNT: usize = 10;

    pub fn index(self) -> usize {
        self as usize
    }

    /// DSSP letters `H B E G I T S P`, coil as `C`, `-` or `L`, and `?` or
    /// `X` for unknown.
    pub fn from_code(c: char) -> Option<Self> {
        use SecondaryStructure::*;
        Some(match c.to_ascii_uppercase() {
            'H' => AlphaHelix,
            'B' => Bridge,
            'E' => Strand,
            'G' => Helix310,
            'I' => PiHelix,
            'T' => Turn,
            'S' => Bend,
            'P' => Polyproline,
            'C' | '-' | 'L' => Coil,
            '?' | 'X' => Unknown,
            _ => return None,
        })
    }
}

/// Parses an annotation file: one code per residue, whitespace ignored,
/// lines starting with `>` or `#` skipped.
pub fn parse_secondary_structure(text: &str) -> Result<Vec<SecondaryStructure>, GeometryError> {
    text.lines()
        .filter(|l| !l.starts_with('>') && !l.starts_with('#'))
        .flat_map(str::chars)
        .filter(|c| !c.is_whitespace())
        .map(|c| {
            SecondaryStructure::from_code(c)
                .ok_or_else(|| GeometryError::Annotation(format!("unknown code {c:?}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_codes() {
        let ss = parse_secondary_structure("> chain A\nHHH-\nEE?\n").unwrap();
        assert_eq!(ss.len(), 7);
        assert_eq!(ss[0], SecondaryStructure::AlphaHelix);
        assert_eq!(ss[3], SecondaryStructure::Coil);
        assert_eq!(ss[6], SecondaryStructure::Unknown);
        assert!(parse_secondary_structure("HZ").is_err());
    }
}
