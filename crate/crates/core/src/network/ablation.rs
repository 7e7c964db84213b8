//! Declarative switches selecting the full model or one of its ablated
//! baselines.

use std::fmt;

use crate::afs::AfsMode;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmfmMode {
    Full,
    /// No modulated stream at all.
    Off,
    /// Modulated stream replaced by `rgb ⊕ depth`.
    Add,
    /// Modulated stream replaced by a 3×3 conv + ReLU over `Cat{rgb, depth}`.
    Concat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PeaMode {
    Full,
    Off,
    NoPosition,
    NoEdge,
}

impl PeaMode {
    pub fn position(self) -> bool {
        matches!(self, PeaMode::Full | PeaMode::NoEdge)
    }

    pub fn edge(self) -> bool {
        matches!(self, PeaMode::Full | PeaMode::NoPosition)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AblationSpec {
    pub cmfm: CmfmMode,
    pub afs: AfsMode,
    pub pea: PeaMode,
}

const CMFM_NAMES: [(CmfmMode, &str); 4] = [
    (CmfmMode::Full, "full"),
    (CmfmMode::Off, "off"),
    (CmfmMode::Add, "add"),
    (CmfmMode::Concat, "concat"),
];

const AFS_NAMES: [(AfsMode, &str); 5] = [
    (AfsMode::Full, "full"),
    (AfsMode::Off, "off"),
    (AfsMode::NoGff, "no_gff"),
    (AfsMode::NoCaca, "no_caca"),
    (AfsMode::PlainCa, "plain_ca"),
];

const PEA_NAMES: [(PeaMode, &str); 4] = [
    (PeaMode::Full, "full"),
    (PeaMode::Off, "off"),
    (PeaMode::NoPosition, "no_position"),
    (PeaMode::NoEdge, "no_edge"),
];

fn name_of<T: PartialEq + Copy>(table: &[(T, &'static str)], v: T) -> &'static str {
    table.iter().find(|(m, _)| *m == v).map(|(_, n)| *n).expect("complete table")
}

fn parse_mode<T: Copy>(table: &[(T, &'static str)], switch: &'static str, s: &str) -> Result<T> {
    table.iter().find(|(_, n)| *n == s).map(|(m, _)| *m).ok_or_else(|| {
        let valid: Vec<&str> = table.iter().map(|(_, n)| *n).collect();
        Error::Ablation {
            switch,
            msg: format!("unknown mode {s:?}; expected one of {}", valid.join(", ")),
        }
    })
}

/// The full model and the ten baselines, with their short tokens and table
/// labels.
pub const VARIANTS: [(&str, &str, AblationSpec); 11] = [
    ("full", "full model", AblationSpec::FULL),
    ("wo_cmfm", "w/o cmFM", AblationSpec { cmfm: CmfmMode::Off, ..AblationSpec::FULL }),
    ("cmfa", "w/ cmFA", AblationSpec { cmfm: CmfmMode::Add, ..AblationSpec::FULL }),
    ("cmfc", "w/ cmFC", AblationSpec { cmfm: CmfmMode::Concat, ..AblationSpec::FULL }),
    ("wo_afs", "w/o AFS", AblationSpec { afs: AfsMode::Off, ..AblationSpec::FULL }),
    ("wo_gff", "w/o GFF", AblationSpec { afs: AfsMode::NoGff, ..AblationSpec::FULL }),
    ("wo_caca", "w/o CACA", AblationSpec { afs: AfsMode::NoCaca, ..AblationSpec::FULL }),
    ("ca", "w/ CA", AblationSpec { afs: AfsMode::PlainCa, ..AblationSpec::FULL }),
    ("wo_pea", "w/o PEA", AblationSpec { pea: PeaMode::Off, ..AblationSpec::FULL }),
    ("wo_pa", "w/o PA", AblationSpec { pea: PeaMode::NoPosition, ..AblationSpec::FULL }),
    ("wo_pe", "w/o PE", AblationSpec { pea: PeaMode::NoEdge, ..AblationSpec::FULL }),
];

impl AblationSpec {
    pub const FULL: AblationSpec = AblationSpec {
        cmfm: CmfmMode::Full,
        afs: AfsMode::Full,
        pea: PeaMode::Full,
    };

    /// Accepts a variant token (`full`, `wo_cmfm`, …) or the explicit form
    /// `cmfm=<mode>,afs=<mode>,pea=<mode>` with any subset of switches.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some((_, _, spec)) = VARIANTS.iter().find(|(t, _, _)| *t == s) {
            return Ok(*spec);
        }
        if !s.contains('=') {
            let tokens: Vec<&str> = VARIANTS.iter().map(|(t, _, _)| *t).collect();
            return Err(Error::Ablation {
                switch: "variant",
                msg: format!("unknown token {s:?}; expected one of {}", tokens.join(", ")),
            });
        }
        let mut spec = Self::FULL;
        for part in s.split(',') {
            let (k, v) = part.split_once('=').ok_or_else(|| Error::Ablation {
                switch: "variant",
                msg: format!("expected switch=mode, got {part:?}"),
            })?;
            match k.trim() {
                "cmfm" => spec.cmfm = parse_mode(&CMFM_NAMES, "cmfm_mode", v.trim())?,
                "afs" => spec.afs = parse_mode(&AFS_NAMES, "afs_mode", v.trim())?,
                "pea" => spec.pea = parse_mode(&PEA_NAMES, "pea_mode", v.trim())?,
                other => {
                    return Err(Error::Ablation {
                        switch: "variant",
                        msg: format!("unknown switch {other:?}; expected cmfm, afs or pea"),
                    })
                }
            }
        }
        Ok(spec)
    }

    /// Short token when this is one of [`VARIANTS`].
    pub fn token(&self) -> Option<&'static str> {
        VARIANTS.iter().find(|(_, _, s)| s == self).map(|(t, _, _)| *t)
    }

    pub fn label(&self) -> Option<&'static str> {
        VARIANTS.iter().find(|(_, _, s)| s == self).map(|(_, l, _)| *l)
    }

    /// Explicit `cmfm=…,afs=…,pea=…` form, accepted by [`AblationSpec::parse`].
    pub fn explicit(&self) -> String {
        format!(
            "cmfm={},afs={},pea={}",
            name_of(&CMFM_NAMES, self.cmfm),
            name_of(&AFS_NAMES, self.afs),
            name_of(&PEA_NAMES, self.pea)
        )
    }

    /// Checks the switches against a pyramid's stream widths.
    pub fn validate(&self, stream_widths: &[usize]) -> Result<()> {
        let needs_even = matches!(self.afs, AfsMode::Full | AfsMode::NoGff);
        if let Some((l, &c)) = stream_widths.iter().enumerate().find(|(_, &c)| needs_even && c % 2 != 0) {
            return Err(Error::Ablation {
                switch: "afs_mode",
                msg: format!(
                    "mode {} halves stream widths, but level {} has odd width {c}",
                    name_of(&AFS_NAMES, self.afs),
                    l + 1
                ),
            });
        }
        Ok(())
    }
}

impl Default for AblationSpec {
    fn default() -> Self {
        Self::FULL
    }
}

impl fmt::Display for AblationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.token() {
            Some(t) => f.write_str(t),
            None => f.write_str(&self.explicit()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens_round_trip_and_are_distinct() {
        for (token, label, spec) in VARIANTS {
            assert_eq!(AblationSpec::parse(token).unwrap(), spec);
            assert_eq!(spec.token(), Some(token));
            assert_eq!(spec.label(), Some(label));
            assert_eq!(AblationSpec::parse(&spec.explicit()).unwrap(), spec);
        }
        for (i, a) in VARIANTS.iter().enumerate() {
            for b in &VARIANTS[i + 1..] {
                assert_ne!(a.2, b.2);
            }
        }
    }

    #[test]
    fn baselines_differ_from_full_in_one_switch() {
        for (_, _, s) in &VARIANTS[1..] {
            let diffs = [s.cmfm != CmfmMode::Full, s.afs != AfsMode::Full, s.pea != PeaMode::Full];
            assert_eq!(diffs.iter().filter(|&&d| d).count(), 1);
        }
    }

    #[test]
    fn table_labels() {
        let labels: Vec<&str> = VARIANTS.iter().map(|v| v.1).collect();
        assert_eq!(
            labels,
            [
                "full model", "w/o cmFM", "w/ cmFA", "w/ cmFC", "w/o AFS", "w/o GFF", "w/o CACA", "w/ CA",
                "w/o PEA", "w/o PA", "w/o PE"
            ]
        );
    }

    #[test]
    fn errors_name_the_switch() {
        let e = AblationSpec::parse("cmfm=full,afs=bogus").unwrap_err();
        assert!(e.to_string().contains("afs_mode"), "{e}");
        let e = AblationSpec::parse("wo_everything").unwrap_err();
        assert!(e.to_string().contains("wo_cmfm"), "{e}");
        let e = AblationSpec::parse("depth=off").unwrap_err();
        assert!(e.to_string().contains("depth"), "{e}");
        let e = AblationSpec::FULL.validate(&[4, 8, 3, 16, 16]).unwrap_err();
        assert!(e.to_string().contains("afs_mode") && e.to_string().contains("level 3"), "{e}");
        assert!(AblationSpec::parse("wo_gff").unwrap().validate(&[1; 5]).is_err());
        assert!(AblationSpec::parse("wo_caca").unwrap().validate(&[1; 5]).is_ok());
    }

    #[test]
    fn pea_switches() {
        assert!(PeaMode::Full.position() && PeaMode::Full.edge());
        assert!(!PeaMode::Off.position() && !PeaMode::Off.edge());
        assert!(!PeaMode::NoPosition.position() && PeaMode::NoPosition.edge());
        assert!(PeaMode::NoEdge.position() && !PeaMode::NoEdge.edge());
    }

    #[test]
    fn display_prefers_token() {
        assert_eq!(AblationSpec::FULL.to_string(), "full");
        let odd = AblationSpec { cmfm: CmfmMode::Add, afs: AfsMode::Off, pea: PeaMode::Full };
        assert_eq!(odd.to_string(), "cmfm=add,afs=off,pea=full");
    }
}
