/// A `width`-bit datapath value with an unknown-bit mask.
///
/// Two-valued simulation never sets `unknown`; the pessimistic three-valued
/// policy uses it to mark floating or contended bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Word {
    pub value: u64,
    pub unknown: u64,
}

impl Word {
    pub const fn known(value: u64) -> Word {
        Word { value, unknown: 0 }
    }

    pub const fn all_unknown(mask: u64) -> Word {
        Word {
            value: 0,
            unknown: mask,
        }
    }

    pub fn is_known(self) -> bool {
        self.unknown == 0
    }
}

/// Bit mask for a word width in `1..=64`.
pub fn width_mask(width: u32) -> u64 {
    debug_assert!((1..=64).contains(&width));
    if width >= 64 {
        u64::MAX
    } else {
        (1u64 << width) - 1
    }
}
