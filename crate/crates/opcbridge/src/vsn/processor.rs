//! Named processors: the final processing hook of a virtual sensor. Each
//! deployed VS gets its own instance from the registry; everything a VS file
//! references must be registered before the node starts.

use std::collections::HashMap;
use std::sync::Arc;

use crate::model::{ScalarValue, StreamElementSchema};
use crate::vsn::eval::Row;

pub struct ProcessorCtx<'a> {
    pub vs_name: &'a str,
    pub now_ms: u64,
    pub output_schema: &'a StreamElementSchema,
}

/// Turns global-request result rows into at most one output element's
/// values. Failures are isolated by the caller: logged, counted, dropped.
pub trait Processor: Send {
    fn process(
        &mut self,
        rows: &[Row],
        ctx: &ProcessorCtx<'_>,
    ) -> Result<Option<Vec<ScalarValue>>, String>;
}

type Factory = Arc<dyn Fn() -> Box<dyn Processor> + Send + Sync>;

#[derive(Clone, Default)]
pub struct ProcessorRegistry {
    factories: HashMap<String, Factory>,
}

impl ProcessorRegistry {
    pub fn new() -> ProcessorRegistry {
        ProcessorRegistry::default()
    }

    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn() -> Box<dyn Processor> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_owned(), Arc::new(factory));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn instantiate(&self, name: &str) -> Option<Box<dyn Processor>> {
        self.factories.get(name).map(|f| f())
    }

    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.factories.keys().cloned().collect();
        names.sort();
        names
    }
}

/// `forward`: maps the first result row onto the output schema by column
/// name.
pub struct Forward;

impl Processor for Forward {
    fn process(
        &mut self,
        rows: &[Row],
        ctx: &ProcessorCtx<'_>,
    ) -> Result<Option<Vec<ScalarValue>>, String> {
        let Some(row) = rows.first() else {
            return Ok(None);
        };
        let values = ctx
            .output_schema
            .fields
            .iter()
            .map(|f| {
                row.get(&f.name)
                    .cloned()
                    .ok_or_else(|| format!("row has no column `{}`", f.name))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Some(values))
    }
}

/// `alarm_area`: inspects a row for `bath<k>_present = false` while the
/// numeric `arm_zone` is not `k`, and reports the first such area as
/// `bath<k>`. Rows that show no such condition produce nothing.
pub struct AlarmArea;

impl Processor for AlarmArea {
    fn process(
        &mut self,
        rows: &[Row],
        _ctx: &ProcessorCtx<'_>,
    ) -> Result<Option<Vec<ScalarValue>>, String> {
        let Some(row) = rows.first() else {
            return Ok(None);
        };
        let arm_zone = row
            .get("arm_zone")
            .and_then(|v| v.as_f64())
            .ok_or_else(|| "row lacks a numeric `arm_zone` column".to_owned())?;
        for (name, value) in &row.columns {
            let Some(k) = name
                .strip_prefix("bath")
                .and_then(|rest| rest.strip_suffix("_present"))
                .and_then(|k| k.parse::<i64>().ok())
            else {
                continue;
            };
            if *value == ScalarValue::Bool(false) && arm_zone != k as f64 {
                return Ok(Some(vec![ScalarValue::Text(format!("bath{k}"))]));
            }
        }
        Ok(None)
    }
}

/// Registry with the processors every node knows about.
pub fn builtin_registry() -> ProcessorRegistry {
    let mut r = ProcessorRegistry::new();
    r.register("forward", || Box::new(Forward));
    r.register("alarm_area", || Box::new(AlarmArea));
    r
}
