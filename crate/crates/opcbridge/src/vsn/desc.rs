//! Virtual-sensor description files (`*.vsd.xml`): parsing and validation.
//! The format is documented with a complete annotated example in
//! `docs/vs-description.md`.

use thiserror::Error;

use crate::model::{is_identifier, FieldSpec, ScalarType, StreamElementSchema};
use crate::vsn::eval::WindowSpec;
use crate::vsn::processor::ProcessorRegistry;
use crate::vsn::query::{parse_query, Query, QuerySyntaxError};
use crate::wrapper::{ProductionMode, WrapperConfig};

#[derive(Debug, Error)]
pub enum DescError {
    #[error("schema error at {path}: {reason}")]
    Schema { path: String, reason: String },
    #[error("in query `{query}`: {source}")]
    Query {
        query: String,
        #[source]
        source: QuerySyntaxError,
    },
    #[error("unknown processor `{0}`")]
    UnknownProcessor(String),
}

fn schema_err(path: &str, reason: impl Into<String>) -> DescError {
    DescError::Schema { path: path.to_owned(), reason: reason.into() }
}

/// How a VS wrapper gets its elements.
#[derive(Debug, Clone)]
pub enum VsWrapperKind {
    /// Polls an OPC-lite server.
    Opc(WrapperConfig),
    /// Receives the named producer VS's outputs by push; no update period.
    Local { producer: String },
}

#[derive(Debug, Clone)]
pub struct VsWrapper {
    pub name: String,
    pub kind: VsWrapperKind,
    pub request: Query,
    pub request_text: String,
}

#[derive(Debug, Clone)]
pub struct VsDescription {
    pub name: String,
    pub wrappers: Vec<VsWrapper>,
    pub global_request: Query,
    pub global_request_text: String,
    pub window: WindowSpec,
    pub processor: String,
    pub output_schema: StreamElementSchema,
}

/// Parses and fully validates one description file. Processor ids resolve
/// against the given registry.
pub fn parse_vs_description(
    text: &str,
    processors: &ProcessorRegistry,
) -> Result<VsDescription, DescError> {
    let doc = roxmltree::Document::parse(text)
        .map_err(|e| schema_err("/", format!("not well-formed XML: {e}")))?;
    let root = doc.root_element();
    if root.tag_name().name() != "virtual-sensor" {
        return Err(schema_err("/", "root element must be <virtual-sensor>"));
    }
    let vs_name = require_attr(&root, "virtual-sensor", "name")?;
    if !is_identifier(&vs_name) {
        return Err(schema_err("virtual-sensor", format!("bad name `{vs_name}`")));
    }

    let mut wrappers = Vec::new();
    let mut global_request = None;
    let mut window = None;
    let mut processor = None;
    let mut output_schema = None;

    for child in root.children().filter(|n| n.is_element()) {
        match child.tag_name().name() {
            "wrapper" => wrappers.push(parse_wrapper(&child)?),
            "global-request" => {
                let text = child.text().unwrap_or("").trim().to_owned();
                let q = parse_query(&text)
                    .map_err(|e| DescError::Query { query: text.clone(), source: e })?;
                global_request = Some((q, text));
            }
            "window" => window = Some(parse_window(&child)?),
            "processor" => processor = Some(require_attr(&child, "processor", "id")?),
            "output" => output_schema = Some(parse_output(&child)?),
            other => {
                return Err(schema_err(
                    &format!("virtual-sensor/{other}"),
                    "unknown element",
                ))
            }
        }
    }

    if wrappers.is_empty() {
        return Err(schema_err("virtual-sensor", "at least one wrapper required"));
    }
    let mut seen = std::collections::HashSet::new();
    for w in &wrappers {
        if !seen.insert(w.name.as_str()) {
            return Err(schema_err("wrapper", format!("duplicate wrapper name `{}`", w.name)));
        }
    }
    let (global_request, global_request_text) =
        global_request.ok_or_else(|| schema_err("virtual-sensor", "missing <global-request>"))?;
    if !wrappers.iter().any(|w| w.name == global_request.from) {
        return Err(schema_err(
            "global-request",
            format!("source `{}` is not a wrapper of this VS", global_request.from),
        ));
    }
    let window = window.ok_or_else(|| schema_err("virtual-sensor", "missing <window>"))?;
    let processor = processor.ok_or_else(|| schema_err("virtual-sensor", "missing <processor>"))?;
    if !processors.contains(&processor) {
        return Err(DescError::UnknownProcessor(processor));
    }
    let output_schema =
        output_schema.ok_or_else(|| schema_err("virtual-sensor", "missing <output>"))?;

    Ok(VsDescription {
        name: vs_name,
        wrappers,
        global_request,
        global_request_text,
        window,
        processor,
        output_schema,
    })
}

fn require_attr(node: &roxmltree::Node, path: &str, attr: &str) -> Result<String, DescError> {
    node.attribute(attr)
        .map(str::to_owned)
        .ok_or_else(|| schema_err(path, format!("missing attribute `{attr}`")))
}

fn parse_wrapper(node: &roxmltree::Node) -> Result<VsWrapper, DescError> {
    let name = require_attr(node, "wrapper", "name")?;
    let path = format!("wrapper[{name}]");
    if !is_identifier(&name) {
        return Err(schema_err(&path, "wrapper name must be an identifier"));
    }
    let request_text = require_attr(node, &path, "request")?;
    let request = parse_query(&request_text)
        .map_err(|e| DescError::Query { query: request_text.clone(), source: e })?;
    if request.has_aggregates() {
        return Err(DescError::Query {
            query: request_text.clone(),
            source: QuerySyntaxError {
                offset: 0,
                reason: "wrapper requests must not contain aggregates".to_owned(),
            },
        });
    }
    if request.from != name {
        return Err(schema_err(
            &path,
            format!("request FROM `{}` must name its own wrapper `{name}`", request.from),
        ));
    }

    let kind = match require_attr(node, &path, "kind")?.as_str() {
        "opc" => {
            let server = require_attr(node, &path, "server")?;
            let items: Vec<String> = require_attr(node, &path, "items")?
                .split(',')
                .map(|s| s.trim().to_owned())
                .filter(|s| !s.is_empty())
                .collect();
            let period: u64 = require_attr(node, &path, "update-period-ms")?
                .parse()
                .map_err(|_| schema_err(&path, "update-period-ms must be an integer"))?;
            let mode_tok = require_attr(node, &path, "mode")?;
            let mode = ProductionMode::parse(&mode_tok)
                .ok_or_else(|| schema_err(&path, format!("mode must be PPM or CBPM, got `{mode_tok}`")))?;
            let include_ts = match node.attribute("include-source-timestamps") {
                None => false,
                Some("true") => true,
                Some("false") => false,
                Some(other) => {
                    return Err(schema_err(
                        &path,
                        format!("include-source-timestamps must be true/false, got `{other}`"),
                    ))
                }
            };
            let config = WrapperConfig {
                name: name.clone(),
                server_addr: server,
                items,
                update_period_ms: period,
                mode,
                include_source_timestamps: include_ts,
            };
            config.validate().map_err(|e| schema_err(&path, e))?;
            VsWrapperKind::Opc(config)
        }
        "local" => {
            for forbidden in ["items", "update-period-ms", "mode"] {
                if node.attribute(forbidden).is_some() {
                    return Err(schema_err(
                        &path,
                        format!("local wrappers take no `{forbidden}` (push semantics)"),
                    ));
                }
            }
            let producer = require_attr(node, &path, "server")?;
            VsWrapperKind::Local { producer }
        }
        other => return Err(schema_err(&path, format!("kind must be opc|local, got `{other}`"))),
    };

    Ok(VsWrapper { name, kind, request, request_text })
}

fn parse_window(node: &roxmltree::Node) -> Result<WindowSpec, DescError> {
    match (node.attribute("count"), node.attribute("time-ms")) {
        (Some(n), None) => {
            let n: usize = n
                .parse()
                .map_err(|_| schema_err("window", "count must be an integer"))?;
            if n < 1 {
                return Err(schema_err("window", "count must be >= 1"));
            }
            Ok(WindowSpec::ByCount { n })
        }
        (None, Some(ms)) => {
            let ms: u64 = ms
                .parse()
                .map_err(|_| schema_err("window", "time-ms must be an integer"))?;
            if ms < 1 {
                return Err(schema_err("window", "time-ms must be >= 1"));
            }
            Ok(WindowSpec::ByTime { ms })
        }
        _ => Err(schema_err("window", "exactly one of count= or time-ms= required")),
    }
}

fn parse_output(node: &roxmltree::Node) -> Result<StreamElementSchema, DescError> {
    let mut fields = Vec::new();
    for field in node.children().filter(|n| n.is_element()) {
        if field.tag_name().name() != "field" {
            return Err(schema_err("output", "only <field> elements allowed"));
        }
        let name = require_attr(&field, "output/field", "name")?;
        let ty_tok = require_attr(&field, "output/field", "type")?;
        let ty = ScalarType::parse(&ty_tok).ok_or_else(|| {
            schema_err(
                "output/field",
                format!(
                    "unknown type `{ty_tok}` (expected one of {})",
                    ScalarType::ALL.map(|t| t.name()).join(", ")
                ),
            )
        })?;
        let description = field.attribute("description").unwrap_or("").to_owned();
        fields.push(FieldSpec { name, ty, description });
    }
    StreamElementSchema::new(fields).map_err(|e| schema_err("output", e.to_string()))
}
