use std::fmt;

use serde::{Deserialize, Serialize};

/// Element type of a tensor and the arithmetic applied to it.
///
/// Multiplies accumulate into a wider register: Int8 and FP16 products both
/// land in 32-bit accumulators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataType {
    Int8,
    Fp16,
    Fp32,
}

impl DataType {
    pub const ALL: [DataType; 3] = [DataType::Int8, DataType::Fp16, DataType::Fp32];

    pub fn input_bits(self) -> u32 {
        match self {
            DataType::Int8 => 8,
            DataType::Fp16 => 16,
            DataType::Fp32 => 32,
        }
    }

    pub fn accumulator_bits(self) -> u32 {
        32
    }

    /// Accumulator-to-input width ratio; also the number of reduction
    /// elements folded into one wide-accumulate lane per instruction.
    pub fn accumulate_ratio(self) -> u32 {
        self.accumulator_bits() / self.input_bits()
    }

    pub fn input_bytes(self) -> u64 {
        u64::from(self.input_bits() / 8)
    }

    pub fn accumulator_bytes(self) -> u64 {
        u64::from(self.accumulator_bits() / 8)
    }

    pub fn parse(s: &str) -> Option<DataType> {
        match s.to_ascii_lowercase().as_str() {
            "int8" | "i8" => Some(DataType::Int8),
            "fp16" | "f16" | "half" => Some(DataType::Fp16),
            "fp32" | "f32" | "float" => Some(DataType::Fp32),
            _ => None,
        }
    }
}

impl fmt::Display for DataType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataType::Int8 => "int8",
            DataType::Fp16 => "fp16",
            DataType::Fp32 => "fp32",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accumulator_ratios() {
        assert_eq!(DataType::Int8.accumulate_ratio(), 4);
        assert_eq!(DataType::Fp16.accumulate_ratio(), 2);
        assert_eq!(DataType::Fp32.accumulate_ratio(), 1);
        for dt in DataType::ALL {
            assert!(dt.accumulator_bits() >= dt.input_bits());
        }
    }

    #[test]
    fn parse_aliases() {
        assert_eq!(DataType::parse("INT8"), Some(DataType::Int8));
        assert_eq!(DataType::parse("f16"), Some(DataType::Fp16));
        assert_eq!(DataType::parse("bf16"), None);
    }
}
