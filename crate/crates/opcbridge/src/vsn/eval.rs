//! Query evaluation: per-element wrapper requests, WHERE comparison
//! semantics, window tables and aggregate evaluation for global requests.
//!
//! Numeric comparisons widen both sides to `f64`; Boolean and Text compare
//! only with `=` and `!=`. There are no nulls anywhere: a missing column is
//! an error, never a null.

use std::collections::VecDeque;

use thiserror::Error;

use crate::model::{ScalarValue, StreamElement};
use crate::vsn::query::{
    AggregateCall, AggregateFunc, CmpOp, Expr, Literal, Operand, Query, SelectList,
};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
}

/// One selected row: named values plus the timestamp of the element it came
/// from.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub columns: Vec<(String, ScalarValue)>,
    pub timestamp: u64,
}

impl Row {
    pub fn get(&self, name: &str) -> Option<&ScalarValue> {
        self.columns.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }
}

fn literal_value(lit: &Literal) -> ScalarValue {
    match lit {
        Literal::Bool(b) => ScalarValue::Bool(*b),
        Literal::Int(v) => ScalarValue::I64(*v),
        Literal::Float(v) => ScalarValue::F64(*v),
        Literal::Text(s) => ScalarValue::Text(s.clone()),
    }
}

/// WHERE comparison between two values.
fn compare(a: &ScalarValue, op: CmpOp, b: &ScalarValue) -> Result<bool, EvalError> {
    use ScalarValue::{Bool, Text};
    if let (Some(x), Some(y)) = (a.as_f64(), b.as_f64()) {
        return Ok(match op {
            CmpOp::Eq => x == y,
            CmpOp::Ne => x != y,
            CmpOp::Lt => x < y,
            CmpOp::Le => x <= y,
            CmpOp::Gt => x > y,
            CmpOp::Ge => x >= y,
        });
    }
    match (a, b) {
        (Bool(x), Bool(y)) => match op {
            CmpOp::Eq => Ok(x == y),
            CmpOp::Ne => Ok(x != y),
            _ => Err(EvalError::TypeMismatch(format!(
                "`{}` is not defined on boolean values",
                op.symbol()
            ))),
        },
        (Text(x), Text(y)) => match op {
            CmpOp::Eq => Ok(x == y),
            CmpOp::Ne => Ok(x != y),
            _ => Err(EvalError::TypeMismatch(format!(
                "`{}` is not defined on text values",
                op.symbol()
            ))),
        },
        (a, b) => Err(EvalError::TypeMismatch(format!(
            "cannot compare {} with {}",
            a.scalar_type(),
            b.scalar_type()
        ))),
    }
}

fn eval_operand(
    op: &Operand,
    lookup: &impl Fn(&str) -> Option<ScalarValue>,
) -> Result<ScalarValue, EvalError> {
    match op {
        Operand::Column(name) => {
            lookup(name).ok_or_else(|| EvalError::UnknownColumn(name.clone()))
        }
        Operand::Literal(lit) => Ok(literal_value(lit)),
    }
}

/// Evaluates a WHERE expression against a column lookup.
pub fn eval_expr(
    expr: &Expr,
    lookup: &impl Fn(&str) -> Option<ScalarValue>,
) -> Result<bool, EvalError> {
    match expr {
        Expr::Or(l, r) => Ok(eval_expr(l, lookup)? || eval_expr(r, lookup)?),
        Expr::And(l, r) => Ok(eval_expr(l, lookup)? && eval_expr(r, lookup)?),
        Expr::Compare { left, op, right } => {
            let a = eval_operand(left, lookup)?;
            let b = eval_operand(right, lookup)?;
            compare(&a, *op, &b)
        }
    }
}

/// Applies a wrapper request to one incoming element. `None` when the WHERE
/// clause (absent = true) rejects it.
pub fn eval_wrapper_request(
    q: &Query,
    e: &StreamElement,
) -> Result<Option<Row>, EvalError> {
    debug_assert!(!q.has_aggregates(), "wrapper requests have no aggregates");
    let lookup = |name: &str| e.value(name).cloned();
    if let Some(cond) = &q.where_clause {
        if !eval_expr(cond, &lookup)? {
            return Ok(None);
        }
    }
    let columns = match &q.select {
        SelectList::Star => e
            .schema
            .fields
            .iter()
            .zip(&e.values)
            .map(|(f, v)| (f.name.clone(), v.clone()))
            .collect(),
        SelectList::Columns(names) => names
            .iter()
            .map(|n| {
                e.value(n)
                    .map(|v| (n.clone(), v.clone()))
                    .ok_or_else(|| EvalError::UnknownColumn(n.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?,
        SelectList::Aggregates(_) => {
            return Err(EvalError::TypeMismatch(
                "aggregates are not allowed in wrapper requests".to_owned(),
            ))
        }
    };
    Ok(Some(Row { columns, timestamp: e.timestamp }))
}

/// Window bound for one wrapper's selected rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowSpec {
    /// Keep the newest `n` rows.
    ByCount { n: usize },
    /// Keep rows no older than `ms` at evaluation time.
    ByTime { ms: u64 },
}

/// Bounded table of selected rows, one per wrapper within a VS.
#[derive(Debug)]
pub struct WindowTable {
    spec: WindowSpec,
    rows: VecDeque<Row>,
}

impl WindowTable {
    pub fn new(spec: WindowSpec) -> WindowTable {
        WindowTable { spec, rows: VecDeque::new() }
    }

    pub fn push(&mut self, row: Row, now_ms: u64) {
        self.rows.push_back(row);
        self.evict(now_ms);
    }

    /// Enforces the bound as of `now_ms`.
    pub fn evict(&mut self, now_ms: u64) {
        match self.spec {
            WindowSpec::ByCount { n } => {
                while self.rows.len() > n {
                    self.rows.pop_front();
                }
            }
            WindowSpec::ByTime { ms } => {
                let cutoff = now_ms.saturating_sub(ms);
                while self.rows.front().is_some_and(|r| r.timestamp < cutoff) {
                    self.rows.pop_front();
                }
            }
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = &Row> {
        self.rows.iter()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Evaluates one aggregate call over the rows currently in the window.
fn eval_aggregate(call: &AggregateCall, rows: &VecDeque<Row>) -> Result<ScalarValue, EvalError> {
    let col = |row: &Row, name: &str| -> Result<ScalarValue, EvalError> {
        row.get(name)
            .cloned()
            .ok_or_else(|| EvalError::UnknownColumn(name.to_owned()))
    };
    let numeric = |v: ScalarValue, name: &str| -> Result<f64, EvalError> {
        v.as_f64().ok_or_else(|| {
            EvalError::TypeMismatch(format!(
                "{} needs a numeric column, `{name}` is {}",
                call.func.name().to_uppercase(),
                v.scalar_type()
            ))
        })
    };
    match (call.func, &call.column) {
        (AggregateFunc::Count, None) => Ok(ScalarValue::I64(rows.len() as i64)),
        (AggregateFunc::Count, Some(name)) => {
            for row in rows {
                col(row, name)?; // the column must exist; there are no nulls
            }
            Ok(ScalarValue::I64(rows.len() as i64))
        }
        (AggregateFunc::Last, Some(name)) => {
            let last = rows.back().expect("caller checked non-empty");
            col(last, name)
        }
        (AggregateFunc::Avg, Some(name)) => {
            let mut sum = 0.0;
            for row in rows {
                sum += numeric(col(row, name)?, name)?;
            }
            Ok(ScalarValue::F64(sum / rows.len() as f64))
        }
        (AggregateFunc::Min | AggregateFunc::Max, Some(name)) => {
            let mut best: Option<(f64, ScalarValue)> = None;
            for row in rows {
                let v = col(row, name)?;
                let key = numeric(v.clone(), name)?;
                let better = match &best {
                    None => true,
                    Some((bk, _)) => {
                        if call.func == AggregateFunc::Min {
                            key < *bk
                        } else {
                            key > *bk
                        }
                    }
                };
                if better {
                    best = Some((key, v));
                }
            }
            Ok(best.expect("caller checked non-empty").1)
        }
        (func, None) => Err(EvalError::TypeMismatch(format!(
            "{} requires a column",
            func.name().to_uppercase()
        ))),
    }
}

/// Evaluates a global request after a row landed in its source table.
///
/// Aggregate queries run over the whole window (empty window: no result);
/// plain selections apply to the newly appended row only, so each source row
/// yields at most one result. WHERE applies to the candidate row(s) first.
pub fn eval_global(
    q: &Query,
    table: &mut WindowTable,
    new_row: &Row,
    now_ms: u64,
) -> Result<Vec<Row>, EvalError> {
    table.evict(now_ms);
    match &q.select {
        SelectList::Aggregates(calls) => {
            let mut rows = table.rows.clone();
            if let Some(cond) = &q.where_clause {
                let mut filtered = VecDeque::new();
                for row in rows {
                    let lookup = |name: &str| row.get(name).cloned();
                    if eval_expr(cond, &lookup)? {
                        filtered.push_back(row);
                    }
                }
                rows = filtered;
            }
            if rows.is_empty() {
                return Ok(Vec::new());
            }
            let mut columns = Vec::with_capacity(calls.len());
            for call in calls {
                columns.push((call.result_name(), eval_aggregate(call, &rows)?));
            }
            Ok(vec![Row { columns, timestamp: now_ms }])
        }
        SelectList::Star | SelectList::Columns(_) => {
            let lookup = |name: &str| new_row.get(name).cloned();
            if let Some(cond) = &q.where_clause {
                if !eval_expr(cond, &lookup)? {
                    return Ok(Vec::new());
                }
            }
            let columns = match &q.select {
                SelectList::Star => new_row.columns.clone(),
                SelectList::Columns(names) => names
                    .iter()
                    .map(|n| {
                        new_row
                            .get(n)
                            .map(|v| (n.clone(), v.clone()))
                            .ok_or_else(|| EvalError::UnknownColumn(n.clone()))
                    })
                    .collect::<Result<Vec<_>, _>>()?,
                SelectList::Aggregates(_) => unreachable!(),
            };
            Ok(vec![Row { columns, timestamp: new_row.timestamp }])
        }
    }
}
