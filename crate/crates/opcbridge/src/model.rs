//! Shared data model: item readings on the OPC side, the `StreamElement`
//! data unit on the node side, and the conversion between the two.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A single typed value as carried by both item reads and stream elements.
///
/// Equality is **bit-exact** for the float variants (`-0.0 != 0.0`), which is
/// what change-based production relies on: the server reproduces cached
/// values verbatim, so exact comparison is sound. Float variants never carry
/// NaN; readings that would produce NaN are mapped to `Bad` quality upstream
/// (see [`coerce_nan`]).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarValue {
    Bool(bool),
    I16(i16),
    I32(i32),
    I64(i64),
    F32(f32),
    F64(f64),
    Text(String),
}

impl PartialEq for ScalarValue {
    fn eq(&self, other: &Self) -> bool {
        use ScalarValue::*;
        match (self, other) {
            (Bool(a), Bool(b)) => a == b,
            (I16(a), I16(b)) => a == b,
            (I32(a), I32(b)) => a == b,
            (I64(a), I64(b)) => a == b,
            (F32(a), F32(b)) => a.to_bits() == b.to_bits(),
            (F64(a), F64(b)) => a.to_bits() == b.to_bits(),
            (Text(a), Text(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for ScalarValue {}

impl ScalarValue {
    pub fn scalar_type(&self) -> ScalarType {
        match self {
            ScalarValue::Bool(_) => ScalarType::Bool,
            ScalarValue::I16(_) => ScalarType::I16,
            ScalarValue::I32(_) => ScalarType::I32,
            ScalarValue::I64(_) => ScalarType::I64,
            ScalarValue::F32(_) => ScalarType::F32,
            ScalarValue::F64(_) => ScalarType::F64,
            ScalarValue::Text(_) => ScalarType::Text,
        }
    }

    /// Numeric payload widened to `f64`, if this is a numeric variant.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ScalarValue::I16(v) => Some(f64::from(*v)),
            ScalarValue::I32(v) => Some(f64::from(*v)),
            ScalarValue::I64(v) => Some(*v as f64),
            ScalarValue::F32(v) => Some(f64::from(*v)),
            ScalarValue::F64(v) => Some(*v),
            _ => None,
        }
    }

    pub fn is_numeric(&self) -> bool {
        self.as_f64().is_some()
    }
}

/// Variant tag of a [`ScalarValue`]; used in schemas and config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScalarType {
    Bool,
    I16,
    I32,
    I64,
    F32,
    F64,
    Text,
}

impl ScalarType {
    pub const ALL: [ScalarType; 7] = [
        ScalarType::Bool,
        ScalarType::I16,
        ScalarType::I32,
        ScalarType::I64,
        ScalarType::F32,
        ScalarType::F64,
        ScalarType::Text,
    ];

    /// Name used in VS description files and docs.
    pub fn name(&self) -> &'static str {
        match self {
            ScalarType::Bool => "boolean",
            ScalarType::I16 => "int16",
            ScalarType::I32 => "int32",
            ScalarType::I64 => "int64",
            ScalarType::F32 => "float32",
            ScalarType::F64 => "float64",
            ScalarType::Text => "text",
        }
    }

    pub fn parse(s: &str) -> Option<ScalarType> {
        ScalarType::ALL.iter().copied().find(|t| t.name() == s)
    }
}

impl std::fmt::Display for ScalarType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Validity status of a reading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QualityStatus {
    Good,
    Uncertain,
    Bad,
}

/// Per-reading quality: status plus a small vendor substatus code.
///
/// The substatus is 0 whenever the status is `Good`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Quality {
    pub status: QualityStatus,
    pub substatus: u8,
}

impl Quality {
    pub const GOOD: Quality = Quality { status: QualityStatus::Good, substatus: 0 };

    pub fn uncertain(substatus: u8) -> Quality {
        Quality { status: QualityStatus::Uncertain, substatus }
    }

    pub fn bad(substatus: u8) -> Quality {
        Quality { status: QualityStatus::Bad, substatus }
    }

    pub fn is_bad(&self) -> bool {
        self.status == QualityStatus::Bad
    }
}

/// Server-side timestamp of a cache cell update, in milliseconds UTC.
///
/// Monotone non-decreasing per item across successive cache updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct OpcTimestamp(pub u64);

/// One complete item reading: value, quality, source timestamp.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemValue {
    pub value: ScalarValue,
    pub quality: Quality,
    pub timestamp: OpcTimestamp,
}

impl ItemValue {
    pub fn good(value: ScalarValue, ts: u64) -> ItemValue {
        ItemValue { value, quality: Quality::GOOD, timestamp: OpcTimestamp(ts) }
    }
}

/// Maps NaN float readings to a `Bad` quality so that no NaN ever enters a
/// [`ScalarValue`] that downstream code compares or aggregates.
pub fn coerce_nan(value: ScalarValue, quality: Quality) -> (ScalarValue, Quality) {
    match value {
        ScalarValue::F32(v) if v.is_nan() => (ScalarValue::F32(0.0), Quality::bad(1)),
        ScalarValue::F64(v) if v.is_nan() => (ScalarValue::F64(0.0), Quality::bad(1)),
        other => (other, quality),
    }
}

/// One named, typed field of a stream element schema.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldSpec {
    pub name: String,
    pub ty: ScalarType,
    pub description: String,
}

/// Ordered, uniquely named field list of a stream element.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StreamElementSchema {
    pub fields: Vec<FieldSpec>,
}

impl StreamElementSchema {
    pub fn new(fields: Vec<FieldSpec>) -> Result<StreamElementSchema, ModelError> {
        let mut seen = std::collections::HashSet::new();
        for f in &fields {
            if !is_identifier(&f.name) {
                return Err(ModelError::BadFieldName(f.name.clone()));
            }
            if !seen.insert(f.name.clone()) {
                return Err(ModelError::DuplicateName(f.name.clone()));
            }
        }
        Ok(StreamElementSchema { fields })
    }

    pub fn field_index(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f.name == name)
    }
}

/// The discrete data unit flowing through the node: a schema, one value per
/// field, and the production timestamp in milliseconds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamElement {
    pub schema: StreamElementSchema,
    pub values: Vec<ScalarValue>,
    pub timestamp: u64,
}

impl StreamElement {
    /// Builds an element, checking the length/type invariant.
    pub fn new(
        schema: StreamElementSchema,
        values: Vec<ScalarValue>,
        timestamp: u64,
    ) -> Result<StreamElement, ModelError> {
        if schema.fields.len() != values.len() {
            return Err(ModelError::LengthMismatch {
                expected: schema.fields.len(),
                got: values.len(),
            });
        }
        for (f, v) in schema.fields.iter().zip(&values) {
            if f.ty != v.scalar_type() {
                return Err(ModelError::TypeMismatch {
                    field: f.name.clone(),
                    expected: f.ty,
                    got: v.scalar_type(),
                });
            }
        }
        Ok(StreamElement { schema, values, timestamp })
    }

    pub fn value(&self, field: &str) -> Option<&ScalarValue> {
        self.schema.field_index(field).map(|i| &self.values[i])
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("duplicate field name `{0}`")]
    DuplicateName(String),
    #[error("empty item list")]
    EmptyItemList,
    #[error("field name `{0}` is not a valid identifier")]
    BadFieldName(String),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("field `{field}`: expected {expected}, got {got}")]
    TypeMismatch { field: String, expected: ScalarType, got: ScalarType },
}

pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Turns an OPC item name into a schema field identifier. Item names may
/// contain `.` and `/`, schema fields may not; both map to `_`.
pub fn field_name_for_item(item: &str) -> String {
    item.chars().map(|c| if c == '.' || c == '/' { '_' } else { c }).collect()
}

/// Converts one synchronous read into a stream element.
///
/// Schema fields are `(sanitized item name, value type, "opc-item")` in input
/// order, values copied verbatim, timestamp set to `emit_time`. With
/// `include_source_timestamps`, each item additionally contributes an `I64`
/// field `<name>_ts` carrying the server-side timestamp.
pub fn convert_item_values(
    items: &[(String, ItemValue)],
    emit_time: u64,
    include_source_timestamps: bool,
) -> Result<StreamElement, ModelError> {
    if items.is_empty() {
        return Err(ModelError::EmptyItemList);
    }
    let mut fields = Vec::with_capacity(items.len() * 2);
    let mut values = Vec::with_capacity(items.len() * 2);
    for (name, iv) in items {
        fields.push(FieldSpec {
            name: field_name_for_item(name),
            ty: iv.value.scalar_type(),
            description: "opc-item".to_owned(),
        });
        values.push(iv.value.clone());
    }
    if include_source_timestamps {
        for (name, iv) in items {
            fields.push(FieldSpec {
                name: format!("{}_ts", field_name_for_item(name)),
                ty: ScalarType::I64,
                description: "opc-source-timestamp".to_owned(),
            });
            values.push(ScalarValue::I64(iv.timestamp.0 as i64));
        }
    }
    let schema = StreamElementSchema::new(fields)?;
    StreamElement::new(schema, values, emit_time)
}

/// Position-wise comparison of two readings, ignoring source timestamps.
///
/// True iff every position has an equal value (bit-exact for floats) and an
/// equal quality status. Substatus codes and timestamps do not participate.
pub fn values_equal_ignoring_timestamp(
    a: &[ItemValue],
    b: &[ItemValue],
) -> Result<bool, ModelError> {
    if a.len() != b.len() {
        return Err(ModelError::LengthMismatch { expected: a.len(), got: b.len() });
    }
    Ok(a.iter()
        .zip(b)
        .all(|(x, y)| x.value == y.value && x.quality.status == y.quality.status))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(value: ScalarValue, ts: u64) -> ItemValue {
        ItemValue::good(value, ts)
    }

    #[test]
    fn convert_single_float_item() {
        let items = vec![("t1".to_owned(), iv(ScalarValue::F64(2.5), 1000))];
        let e = convert_item_values(&items, 1040, false).unwrap();
        assert_eq!(e.schema.fields.len(), 1);
        assert_eq!(e.schema.fields[0].name, "t1");
        assert_eq!(e.schema.fields[0].ty, ScalarType::F64);
        assert_eq!(e.values, vec![ScalarValue::F64(2.5)]);
        assert_eq!(e.timestamp, 1040);
    }

    #[test]
    fn convert_empty_list_is_an_error() {
        assert_eq!(convert_item_values(&[], 0, false), Err(ModelError::EmptyItemList));
    }

    #[test]
    fn convert_with_source_timestamps() {
        // Constructed by hand from the conversion rule: value fields in input
        // order, then one I64 `<name>_ts` per item.
        let items = vec![
            ("a".to_owned(), iv(ScalarValue::Bool(true), 900)),
            ("b".to_owned(), iv(ScalarValue::I32(7), 950)),
        ];
        let e = convert_item_values(&items, 1000, true).unwrap();
        let names: Vec<_> = e.schema.fields.iter().map(|f| f.name.as_str()).collect();
        assert_eq!(names, vec!["a", "b", "a_ts", "b_ts"]);
        assert_eq!(
            e.values,
            vec![
                ScalarValue::Bool(true),
                ScalarValue::I32(7),
                ScalarValue::I64(900),
                ScalarValue::I64(950),
            ]
        );
        assert_eq!(e.timestamp, 1000);
    }

    #[test]
    fn convert_duplicate_names_rejected() {
        let items = vec![
            ("x".to_owned(), iv(ScalarValue::I32(1), 0)),
            ("x".to_owned(), iv(ScalarValue::I32(2), 0)),
        ];
        assert!(matches!(
            convert_item_values(&items, 0, false),
            Err(ModelError::DuplicateName(_))
        ));
    }

    #[test]
    fn convert_sanitized_collision_rejected() {
        // "a.b" and "a_b" sanitize to the same field name.
        let items = vec![
            ("a.b".to_owned(), iv(ScalarValue::I32(1), 0)),
            ("a_b".to_owned(), iv(ScalarValue::I32(2), 0)),
        ];
        assert!(matches!(
            convert_item_values(&items, 0, false),
            Err(ModelError::DuplicateName(_))
        ));
    }

    #[test]
    fn convert_ts_suffix_collision_rejected() {
        // An item literally named "a_ts" collides with the generated
        // timestamp field of item "a".
        let items = vec![
            ("a".to_owned(), iv(ScalarValue::I32(1), 0)),
            ("a_ts".to_owned(), iv(ScalarValue::I64(2), 0)),
        ];
        assert!(matches!(
            convert_item_values(&items, 0, true),
            Err(ModelError::DuplicateName(_))
        ));
        // Without source timestamps there is no collision.
        assert!(convert_item_values(&items, 0, false).is_ok());
    }

    #[test]
    fn conversion_is_lossless_for_every_variant() {
        let samples = vec![
            ScalarValue::Bool(true),
            ScalarValue::I16(-7),
            ScalarValue::I32(123456),
            ScalarValue::I64(-9_876_543_210),
            ScalarValue::F32(-0.0),
            ScalarValue::F64(1.0e-308),
            ScalarValue::Text("héllo wörld".to_owned()),
        ];
        for v in samples {
            let items = vec![("it".to_owned(), iv(v.clone(), 5))];
            let e = convert_item_values(&items, 10, false).unwrap();
            assert_eq!(e.values[0], v);
            assert_eq!(e.schema.fields[0].ty, v.scalar_type());
        }
    }

    #[test]
    fn equality_ignores_timestamps() {
        let a = vec![iv(ScalarValue::I32(5), 100)];
        let b = vec![iv(ScalarValue::I32(5), 999)];
        assert_eq!(values_equal_ignoring_timestamp(&a, &b), Ok(true));
    }

    #[test]
    fn equality_sees_payload_change() {
        let a = vec![iv(ScalarValue::I32(5), 100)];
        let b = vec![iv(ScalarValue::I32(6), 100)];
        assert_eq!(values_equal_ignoring_timestamp(&a, &b), Ok(false));
    }

    #[test]
    fn equality_sees_quality_flip() {
        let a = vec![iv(ScalarValue::I32(5), 100)];
        let b = vec![ItemValue {
            value: ScalarValue::I32(5),
            quality: Quality::bad(0),
            timestamp: OpcTimestamp(100),
        }];
        assert_eq!(values_equal_ignoring_timestamp(&a, &b), Ok(false));
    }

    #[test]
    fn equality_ignores_substatus() {
        let a = vec![ItemValue {
            value: ScalarValue::I32(5),
            quality: Quality::uncertain(1),
            timestamp: OpcTimestamp(0),
        }];
        let b = vec![ItemValue {
            value: ScalarValue::I32(5),
            quality: Quality::uncertain(9),
            timestamp: OpcTimestamp(0),
        }];
        assert_eq!(values_equal_ignoring_timestamp(&a, &b), Ok(true));
    }

    #[test]
    fn equality_is_reflexive() {
        let xs = vec![
            iv(ScalarValue::F64(-0.0), 1),
            iv(ScalarValue::Text(String::new()), 2),
            iv(ScalarValue::Bool(false), 3),
        ];
        assert_eq!(values_equal_ignoring_timestamp(&xs, &xs), Ok(true));
    }

    #[test]
    fn equality_length_mismatch() {
        let a = vec![iv(ScalarValue::I32(5), 0)];
        assert!(matches!(
            values_equal_ignoring_timestamp(&a, &[]),
            Err(ModelError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn float_equality_is_bit_exact() {
        assert_ne!(ScalarValue::F64(-0.0), ScalarValue::F64(0.0));
        assert_eq!(ScalarValue::F64(-0.0), ScalarValue::F64(-0.0));
        assert_ne!(ScalarValue::F32(1.0), ScalarValue::F64(1.0));
    }

    #[test]
    fn nan_coercion() {
        let (v, q) = coerce_nan(ScalarValue::F64(f64::NAN), Quality::GOOD);
        assert_eq!(v, ScalarValue::F64(0.0));
        assert!(q.is_bad());
        let (v, q) = coerce_nan(ScalarValue::F64(1.5), Quality::GOOD);
        assert_eq!(v, ScalarValue::F64(1.5));
        assert_eq!(q, Quality::GOOD);
    }

    #[test]
    fn element_invariant_enforced() {
        let schema = StreamElementSchema::new(vec![FieldSpec {
            name: "x".to_owned(),
            ty: ScalarType::I32,
            description: String::new(),
        }])
        .unwrap();
        assert!(StreamElement::new(schema.clone(), vec![ScalarValue::I64(1)], 0).is_err());
        assert!(StreamElement::new(schema, vec![ScalarValue::I32(1)], 0).is_ok());
    }

    #[test]
    fn identifier_rules() {
        assert!(is_identifier("bath1_present"));
        assert!(is_identifier("_x"));
        assert!(!is_identifier("1x"));
        assert!(!is_identifier("a.b"));
        assert!(!is_identifier(""));
        assert_eq!(field_name_for_item("bath1.present"), "bath1_present");
        assert_eq!(field_name_for_item("arm/zone"), "arm_zone");
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_scalar() -> impl Strategy<Value = ScalarValue> {
            prop_oneof![
                any::<bool>().prop_map(ScalarValue::Bool),
                any::<i16>().prop_map(ScalarValue::I16),
                any::<i32>().prop_map(ScalarValue::I32),
                any::<i64>().prop_map(ScalarValue::I64),
                any::<u32>().prop_map(|bits| {
                    let v = f32::from_bits(bits);
                    ScalarValue::F32(if v.is_nan() { 0.0 } else { v })
                }),
                any::<u64>().prop_map(|bits| {
                    let v = f64::from_bits(bits);
                    ScalarValue::F64(if v.is_nan() { 0.0 } else { v })
                }),
                ".*".prop_map(ScalarValue::Text),
            ]
        }

        fn arb_reading() -> impl Strategy<Value = Vec<ItemValue>> {
            prop::collection::vec(
                (arb_scalar(), 0u8..3, any::<u8>(), any::<u64>()).prop_map(
                    |(value, status, sub, ts)| ItemValue {
                        value,
                        quality: match status {
                            0 => Quality::GOOD,
                            1 => Quality::uncertain(sub),
                            _ => Quality::bad(sub),
                        },
                        timestamp: OpcTimestamp(ts),
                    },
                ),
                0..8,
            )
        }

        proptest! {
            #[test]
            fn equality_reflexive_for_any_reading(xs in arb_reading()) {
                prop_assert_eq!(values_equal_ignoring_timestamp(&xs, &xs), Ok(true));
            }

            #[test]
            fn conversion_is_lossless_and_well_formed(
                values in prop::collection::vec(arb_scalar(), 1..6),
                emit in any::<u64>(),
                include_ts in any::<bool>(),
            ) {
                let items: Vec<(String, ItemValue)> = values
                    .iter()
                    .enumerate()
                    .map(|(i, v)| (format!("item{i}"), ItemValue::good(v.clone(), i as u64)))
                    .collect();
                let e = convert_item_values(&items, emit, include_ts).unwrap();
                // Length/type invariant holds by construction.
                prop_assert!(StreamElement::new(e.schema.clone(), e.values.clone(), e.timestamp).is_ok());
                for (i, v) in values.iter().enumerate() {
                    prop_assert_eq!(&e.values[i], v);
                }
                prop_assert_eq!(e.timestamp, emit);
            }
        }
    }
}
