//! Lesion classes in their fixed channel order.

use serde::{Deserialize, Serialize};

pub const NUM_LESIONS: usize = 4;

/// The four segmented lesion types. Channel order everywhere is EX, HE, MA, SE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Lesion {
    /// Hard exudate.
    EX,
    /// Haemorrhage.
    HE,
    /// Microaneurysm.
    MA,
    /// Soft exudate.
    SE,
}

impl Lesion {
    pub const ALL: [Lesion; NUM_LESIONS] = [Lesion::EX, Lesion::HE, Lesion::MA, Lesion::SE];

    pub fn channel(self) -> usize {
        self as usize
    }

    pub fn code(self) -> &'static str {
        match self {
            Lesion::EX => "EX",
            Lesion::HE => "HE",
            Lesion::MA => "MA",
            Lesion::SE => "SE",
        }
    }

    /// Overlay color: EX yellow, HE red, MA green, SE cyan.
    pub fn color(self) -> [u8; 3] {
        match self {
            Lesion::EX => [255, 255, 0],
            Lesion::HE => [255, 0, 0],
            Lesion::MA => [0, 255, 0],
            Lesion::SE => [0, 255, 255],
        }
    }
}

pub fn lesion_order() -> Vec<String> {
    Lesion::ALL.iter().map(|l| l.code().to_string()).collect()
}
