//! The BPMN 2.0 subset understood by the compiler: parsing, serialization,
//! and the fragment slice/splice operations used by repair.
//!
//! Supported flow elements are start/end events, tasks (`task`,
//! `serviceTask`, `userTask`), exclusive and parallel gateways, sequence
//! flows and a single flat lane set. Anything else that carries control flow
//! is rejected with [`ModelError::UnsupportedElement`].

use std::collections::{BTreeMap, BTreeSet};

use quick_xml::events::{BytesDecl, BytesText, Event};
use quick_xml::Writer;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::region::Region;

pub const BPMN_NS: &str = "http://www.omg.org/spec/BPMN/20100524/MODEL";
const XSI_NS: &str = "http://www.w3.org/2001/XMLSchema-instance";

/// Ids of the synthetic elements wrapped around a standalone fragment.
pub const FRAGMENT_START: &str = "fragment_start";
pub const FRAGMENT_END: &str = "fragment_end";
pub const FRAGMENT_IN_FLOW: &str = "fragment_in";
pub const FRAGMENT_OUT_FLOW: &str = "fragment_out";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("malformed XML: {0}")]
    MalformedXml(String),
    #[error("unsupported BPMN element `{0}`")]
    UnsupportedElement(String),
    #[error("invalid process structure: {0}")]
    StructureError(String),
    #[error("region is not part of the model: {0}")]
    RegionNotInModel(String),
    #[error("patch id `{0}` collides with the model")]
    IdCollision(String),
    #[error("fragment is not single-entry/single-exit: {0}")]
    NotSese(String),
}

impl ModelError {
    pub fn code(&self) -> &'static str {
        match self {
            ModelError::MalformedXml(_) => "MalformedXml",
            ModelError::UnsupportedElement(_) => "UnsupportedElement",
            ModelError::StructureError(_) => "StructureError",
            ModelError::RegionNotInModel(_) => "RegionNotInModel",
            ModelError::IdCollision(_) => "IdCollision",
            ModelError::NotSese(_) => "NotSese",
        }
    }
}

fn structure(msg: impl Into<String>) -> ModelError {
    ModelError::StructureError(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ElementKind {
    StartEvent,
    EndEvent,
    Task,
    ExclusiveGateway,
    ParallelGateway,
}

impl ElementKind {
    pub fn is_event(self) -> bool {
        matches!(self, ElementKind::StartEvent | ElementKind::EndEvent)
    }

    pub fn is_gateway(self) -> bool {
        matches!(self, ElementKind::ExclusiveGateway | ElementKind::ParallelGateway)
    }

    fn tag(self) -> &'static str {
        match self {
            ElementKind::StartEvent => "startEvent",
            ElementKind::EndEvent => "endEvent",
            ElementKind::Task => "task",
            ElementKind::ExclusiveGateway => "exclusiveGateway",
            ElementKind::ParallelGateway => "parallelGateway",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Element {
    pub id: String,
    pub kind: ElementKind,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SequenceFlow {
    pub id: String,
    pub source: String,
    pub target: String,
    pub guard: Option<String>,
    pub is_default: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lane {
    pub id: String,
    /// The actor name. Participants are identified by lane name.
    pub name: String,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProcessModel {
    pub id: String,
    pub elements: Vec<Element>,
    pub flows: Vec<SequenceFlow>,
    pub lanes: Vec<Lane>,
    pub initial_vars: BTreeSet<String>,
    pub result_vars: BTreeSet<String>,
}

impl ProcessModel {
    pub fn element(&self, id: &str) -> Option<&Element> {
        self.elements.iter().find(|e| e.id == id)
    }

    pub fn flow(&self, id: &str) -> Option<&SequenceFlow> {
        self.flows.iter().find(|f| f.id == id)
    }

    pub fn tasks(&self) -> impl Iterator<Item = &Element> {
        self.elements.iter().filter(|e| e.kind == ElementKind::Task)
    }

    /// Lane name of the lane holding `element`, if any.
    pub fn actor_of(&self, element: &str) -> Option<&str> {
        self.lanes
            .iter()
            .find(|l| l.members.iter().any(|m| m == element))
            .map(|l| l.name.as_str())
    }

    pub fn actors(&self) -> BTreeSet<String> {
        self.lanes.iter().map(|l| l.name.clone()).collect()
    }

    pub fn start_event(&self) -> Option<&Element> {
        self.elements.iter().find(|e| e.kind == ElementKind::StartEvent)
    }

    pub fn end_event(&self) -> Option<&Element> {
        self.elements.iter().find(|e| e.kind == ElementKind::EndEvent)
    }

    /// Order-insensitive comparison of ids, kinds, names, flows (with guards
    /// and default flags), lane memberships and declared variables.
    pub fn structurally_eq(&self, other: &ProcessModel) -> bool {
        self.structure_key() == other.structure_key()
    }

    #[allow(clippy::type_complexity)]
    fn structure_key(
        &self,
    ) -> (
        &str,
        BTreeMap<&str, (ElementKind, &str)>,
        BTreeMap<&str, (&str, &str, Option<&str>, bool)>,
        BTreeMap<&str, (&str, BTreeSet<&str>)>,
        &BTreeSet<String>,
        &BTreeSet<String>,
    ) {
        let elements = self
            .elements
            .iter()
            .map(|e| (e.id.as_str(), (e.kind, e.name.as_str())))
            .collect();
        let flows = self
            .flows
            .iter()
            .map(|f| {
                (
                    f.id.as_str(),
                    (f.source.as_str(), f.target.as_str(), f.guard.as_deref(), f.is_default),
                )
            })
            .collect();
        let lanes = self
            .lanes
            .iter()
            .map(|l| {
                (
                    l.id.as_str(),
                    (l.name.as_str(), l.members.iter().map(String::as_str).collect()),
                )
            })
            .collect();
        (&self.id, elements, flows, lanes, &self.initial_vars, &self.result_vars)
    }
}

// ---------------------------------------------------------------------------
// Parsing

/// Flow elements from the wider BPMN vocabulary that change control flow and
/// are therefore refused instead of skipped.
const UNSUPPORTED: &[&str] = &[
    "subProcess",
    "transaction",
    "adHocSubProcess",
    "callActivity",
    "sendTask",
    "receiveTask",
    "scriptTask",
    "manualTask",
    "businessRuleTask",
    "inclusiveGateway",
    "complexGateway",
    "eventBasedGateway",
    "intermediateCatchEvent",
    "intermediateThrowEvent",
    "boundaryEvent",
    "messageFlow",
    "choreography",
    "choreographyTask",
    "subChoreography",
];

/// Process children that carry no control flow and are ignored.
const IGNORED: &[&str] = &[
    "documentation",
    "extensionElements",
    "textAnnotation",
    "association",
    "group",
    "dataObject",
    "dataObjectReference",
    "dataStoreReference",
    "property",
];

fn is_bpmn(node: &roxmltree::Node<'_, '_>) -> bool {
    node.is_element() && node.tag_name().namespace() == Some(BPMN_NS)
}

fn required_attr<'a>(node: &roxmltree::Node<'a, '_>, name: &str) -> Result<&'a str, ModelError> {
    node.attribute(name).ok_or_else(|| {
        structure(format!(
            "<{}> is missing the `{name}` attribute",
            node.tag_name().name()
        ))
    })
}

pub fn parse_bpmn(xml: &str) -> Result<ProcessModel, ModelError> {
    let model = parse_unchecked(xml)?;
    validate_model(&model)?;
    Ok(model)
}

/// Parse without checking the structural invariants. Used for fragments,
/// whose boundary nodes legitimately violate the degree rules.
fn parse_unchecked(xml: &str) -> Result<ProcessModel, ModelError> {
    let doc = roxmltree::Document::parse(xml).map_err(|e| ModelError::MalformedXml(e.to_string()))?;
    let root = doc.root_element();
    if !(is_bpmn(&root) && root.tag_name().name() == "definitions") {
        return Err(ModelError::MalformedXml(format!(
            "root element must be bpmn:definitions in namespace {BPMN_NS}"
        )));
    }

    let mut processes = Vec::new();
    for child in root.children().filter(is_bpmn) {
        match child.tag_name().name() {
            "process" => processes.push(child),
            "collaboration" => {
                if let Some(mf) = child
                    .descendants()
                    .find(|n| is_bpmn(n) && n.tag_name().name() == "messageFlow")
                {
                    return Err(ModelError::UnsupportedElement(mf.tag_name().name().into()));
                }
            }
            name if UNSUPPORTED.contains(&name) || name == "choreography" => {
                return Err(ModelError::UnsupportedElement(name.into()))
            }
            _ => {}
        }
    }
    let process = match processes.as_slice() {
        [p] => *p,
        [] => return Err(structure("document contains no process")),
        _ => return Err(structure("document contains more than one process")),
    };

    let mut model = ProcessModel {
        id: required_attr(&process, "id")?.to_string(),
        elements: Vec::new(),
        flows: Vec::new(),
        lanes: Vec::new(),
        initial_vars: BTreeSet::new(),
        result_vars: BTreeSet::new(),
    };
    let mut defaults: Vec<(String, String)> = Vec::new();

    for node in process.children().filter(is_bpmn) {
        let tag = node.tag_name().name();
        let kind = match tag {
            "startEvent" => Some(ElementKind::StartEvent),
            "endEvent" => Some(ElementKind::EndEvent),
            "task" | "serviceTask" | "userTask" => Some(ElementKind::Task),
            "exclusiveGateway" => Some(ElementKind::ExclusiveGateway),
            "parallelGateway" => Some(ElementKind::ParallelGateway),
            _ => None,
        };
        if let Some(kind) = kind {
            if let Some(def) = node
                .children()
                .find(|c| is_bpmn(c) && c.tag_name().name().ends_with("EventDefinition"))
            {
                return Err(ModelError::UnsupportedElement(def.tag_name().name().into()));
            }
            let id = required_attr(&node, "id")?.to_string();
            if let Some(default) = node.attribute("default") {
                defaults.push((id.clone(), default.to_string()));
            }
            model.elements.push(Element {
                id,
                kind,
                name: node.attribute("name").unwrap_or_default().to_string(),
            });
            continue;
        }
        match tag {
            "sequenceFlow" => {
                let guard = node
                    .children()
                    .find(|c| is_bpmn(c) && c.tag_name().name() == "conditionExpression")
                    .map(|c| c.text().unwrap_or_default().trim().to_string())
                    .filter(|g| !g.is_empty());
                model.flows.push(SequenceFlow {
                    id: required_attr(&node, "id")?.to_string(),
                    source: required_attr(&node, "sourceRef")?.to_string(),
                    target: required_attr(&node, "targetRef")?.to_string(),
                    guard,
                    is_default: false,
                });
            }
            "laneSet" => parse_lanes(&node, &mut model.lanes)?,
            "ioSpecification" => {
                for io in node.children().filter(is_bpmn) {
                    let target = match io.tag_name().name() {
                        "dataInput" => &mut model.initial_vars,
                        "dataOutput" => &mut model.result_vars,
                        _ => continue,
                    };
                    let name = io.attribute("name").or_else(|| io.attribute("id"));
                    if let Some(name) = name {
                        target.insert(name.to_string());
                    }
                }
            }
            t if IGNORED.contains(&t) => {}
            t => return Err(ModelError::UnsupportedElement(t.to_string())),
        }
    }

    for (gateway, flow_id) in defaults {
        let flow = model
            .flows
            .iter_mut()
            .find(|f| f.id == flow_id)
            .ok_or_else(|| structure(format!("default flow `{flow_id}` of `{gateway}` does not exist")))?;
        if flow.source != gateway {
            return Err(structure(format!(
                "default flow `{flow_id}` does not leave gateway `{gateway}`"
            )));
        }
        flow.is_default = true;
    }
    Ok(model)
}

fn parse_lanes(lane_set: &roxmltree::Node<'_, '_>, lanes: &mut Vec<Lane>) -> Result<(), ModelError> {
    for lane in lane_set.children().filter(is_bpmn) {
        if lane.tag_name().name() != "lane" {
            continue;
        }
        if lane
            .children()
            .any(|c| is_bpmn(&c) && c.tag_name().name() == "childLaneSet")
        {
            return Err(ModelError::UnsupportedElement("childLaneSet".into()));
        }
        let id = required_attr(&lane, "id")?.to_string();
        let members = lane
            .children()
            .filter(|c| is_bpmn(c) && c.tag_name().name() == "flowNodeRef")
            .map(|c| c.text().unwrap_or_default().trim().to_string())
            .collect();
        lanes.push(Lane {
            name: lane.attribute("name").unwrap_or(&id).to_string(),
            id,
            members,
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Validation

/// Boundary nodes whose degree checks are relaxed on one side. Fragments
/// cut out of a model see only one of the flows the entry receives and the
/// exit emits.
#[derive(Clone, Copy)]
struct Relax<'a> {
    entry: &'a str,
    exit: &'a str,
}

pub fn validate_model(model: &ProcessModel) -> Result<(), ModelError> {
    check_structure(model, None)
}

fn check_structure(model: &ProcessModel, relax: Option<Relax<'_>>) -> Result<(), ModelError> {
    let mut seen = BTreeSet::new();
    for id in model
        .elements
        .iter()
        .map(|e| &e.id)
        .chain(model.flows.iter().map(|f| &f.id))
    {
        if !seen.insert(id.as_str()) {
            return Err(structure(format!("duplicate id `{id}`")));
        }
    }
    let starts = model
        .elements
        .iter()
        .filter(|e| e.kind == ElementKind::StartEvent)
        .count();
    let ends = model
        .elements
        .iter()
        .filter(|e| e.kind == ElementKind::EndEvent)
        .count();
    if starts != 1 {
        return Err(structure(format!("expected exactly one start event, found {starts}")));
    }
    if ends != 1 {
        return Err(structure(format!("expected exactly one end event, found {ends}")));
    }

    let kinds: BTreeMap<&str, ElementKind> = model.elements.iter().map(|e| (e.id.as_str(), e.kind)).collect();
    let mut indeg: BTreeMap<&str, usize> = kinds.keys().map(|k| (*k, 0)).collect();
    let mut outdeg = indeg.clone();
    for f in &model.flows {
        for end in [&f.source, &f.target] {
            if !kinds.contains_key(end.as_str()) {
                return Err(structure(format!("flow `{}` references unknown element `{end}`", f.id)));
            }
        }
        *outdeg.get_mut(f.source.as_str()).unwrap() += 1;
        *indeg.get_mut(f.target.as_str()).unwrap() += 1;
    }

    for e in &model.elements {
        let (i, o) = (indeg[e.id.as_str()], outdeg[e.id.as_str()]);
        let is_entry = relax.is_some_and(|r| r.entry == e.id);
        let is_exit = relax.is_some_and(|r| r.exit == e.id);
        let ok = match e.kind {
            ElementKind::StartEvent => i == 0 && o == 1,
            ElementKind::EndEvent => i == 1 && o == 0,
            ElementKind::Task => (is_entry || i == 1) && (is_exit || o == 1),
            ElementKind::ExclusiveGateway | ElementKind::ParallelGateway => gateway_degrees_ok(i, o, is_entry, is_exit),
        };
        if !ok {
            return Err(structure(format!(
                "{:?} `{}` has {i} incoming and {o} outgoing flows",
                e.kind, e.id
            )));
        }
    }

    for f in &model.flows {
        if f.guard.is_none() && !f.is_default {
            continue;
        }
        let src = kinds[f.source.as_str()];
        if src != ElementKind::ExclusiveGateway || outdeg[f.source.as_str()] < 2 {
            return Err(structure(format!(
                "flow `{}` carries a guard or default flag but does not leave an exclusive split",
                f.id
            )));
        }
    }
    for e in model
        .elements
        .iter()
        .filter(|e| e.kind == ElementKind::ExclusiveGateway)
    {
        let out: Vec<&SequenceFlow> = model.flows.iter().filter(|f| f.source == e.id).collect();
        if out.len() < 2 {
            continue;
        }
        let defaults = out.iter().filter(|f| f.is_default).count();
        if defaults > 1 {
            return Err(structure(format!(
                "exclusive split `{}` has {defaults} default flows",
                e.id
            )));
        }
        if let Some(f) = out.iter().find(|f| !f.is_default && f.guard.is_none()) {
            return Err(structure(format!(
                "flow `{}` leaving exclusive split `{}` has neither a guard nor the default flag",
                f.id, e.id
            )));
        }
    }

    let mut lane_of: BTreeMap<&str, &str> = BTreeMap::new();
    for lane in &model.lanes {
        for m in &lane.members {
            if !kinds.contains_key(m.as_str()) {
                return Err(structure(format!(
                    "lane `{}` references unknown element `{m}`",
                    lane.id
                )));
            }
            if let Some(prev) = lane_of.insert(m.as_str(), lane.id.as_str()) {
                if prev != lane.id {
                    return Err(structure(format!(
                        "element `{m}` belongs to lanes `{prev}` and `{}`",
                        lane.id
                    )));
                }
            }
        }
    }
    if let Some(t) = model
        .elements
        .iter()
        .find(|e| e.kind == ElementKind::Task && !lane_of.contains_key(e.id.as_str()))
    {
        return Err(structure(format!("task `{}` is outside every lane", t.id)));
    }
    Ok(())
}

fn gateway_degrees_ok(i: usize, o: usize, is_entry: bool, is_exit: bool) -> bool {
    match (is_entry, is_exit) {
        (false, false) => (i == 1 && o >= 2) || (i >= 2 && o == 1),
        // Entry: the cut in-degree is unknown, the outgoing side decides.
        (true, false) => o >= 1,
        (false, true) => i >= 1,
        (true, true) => true,
    }
}

// ---------------------------------------------------------------------------
// Serialization

type XmlWriter = Writer<Vec<u8>>;

fn io_ok<T>(r: std::io::Result<T>) -> T {
    r.expect("writing XML to memory cannot fail")
}

pub fn serialize(model: &ProcessModel) -> String {
    let mut w: XmlWriter = Writer::new_with_indent(Vec::new(), b' ', 2);
    io_ok(w.write_event(Event::Decl(BytesDecl::new("1.0", Some("UTF-8"), None))));
    let definitions_id = format!("Definitions_{}", model.id);
    io_ok(
        w.create_element("bpmn:definitions")
            .with_attribute(("xmlns:bpmn", BPMN_NS))
            .with_attribute(("xmlns:xsi", XSI_NS))
            .with_attribute(("id", definitions_id.as_str()))
            .with_attribute(("targetNamespace", "urn:txforge"))
            .write_inner_content(|w| {
                w.create_element("bpmn:process")
                    .with_attribute(("id", model.id.as_str()))
                    .with_attribute(("isExecutable", "true"))
                    .write_inner_content(|w| write_process_body(w, model))?;
                Ok(())
            }),
    );
    String::from_utf8(w.into_inner()).expect("writer only emits UTF-8")
}

fn write_process_body(w: &mut XmlWriter, model: &ProcessModel) -> std::io::Result<()> {
    if !model.initial_vars.is_empty() || !model.result_vars.is_empty() {
        let io_id = format!("IoSpecification_{}", model.id);
        w.create_element("bpmn:ioSpecification")
            .with_attribute(("id", io_id.as_str()))
            .write_inner_content(|w| {
                for v in &model.initial_vars {
                    let id = format!("DataInput_{v}");
                    w.create_element("bpmn:dataInput")
                        .with_attribute(("id", id.as_str()))
                        .with_attribute(("name", v.as_str()))
                        .write_empty()?;
                }
                for v in &model.result_vars {
                    let id = format!("DataOutput_{v}");
                    w.create_element("bpmn:dataOutput")
                        .with_attribute(("id", id.as_str()))
                        .with_attribute(("name", v.as_str()))
                        .write_empty()?;
                }
                w.create_element("bpmn:inputSet").write_empty()?;
                w.create_element("bpmn:outputSet").write_empty()?;
                Ok(())
            })?;
    }
    if !model.lanes.is_empty() {
        let set_id = format!("LaneSet_{}", model.id);
        w.create_element("bpmn:laneSet")
            .with_attribute(("id", set_id.as_str()))
            .write_inner_content(|w| {
                for lane in &model.lanes {
                    w.create_element("bpmn:lane")
                        .with_attribute(("id", lane.id.as_str()))
                        .with_attribute(("name", lane.name.as_str()))
                        .write_inner_content(|w| {
                            for m in &lane.members {
                                w.create_element("bpmn:flowNodeRef")
                                    .write_text_content(BytesText::new(m))?;
                            }
                            Ok(())
                        })?;
                }
                Ok(())
            })?;
    }
    for e in &model.elements {
        let tag = format!("bpmn:{}", e.kind.tag());
        let default = model
            .flows
            .iter()
            .find(|f| f.is_default && f.source == e.id)
            .map(|f| f.id.as_str());
        let mut el = w.create_element(tag.as_str()).with_attribute(("id", e.id.as_str()));
        if !e.name.is_empty() {
            el = el.with_attribute(("name", e.name.as_str()));
        }
        if let Some(default) = default {
            el = el.with_attribute(("default", default));
        }
        el.write_empty()?;
    }
    for f in &model.flows {
        let el = w
            .create_element("bpmn:sequenceFlow")
            .with_attribute(("id", f.id.as_str()))
            .with_attribute(("sourceRef", f.source.as_str()))
            .with_attribute(("targetRef", f.target.as_str()));
        match &f.guard {
            None => {
                el.write_empty()?;
            }
            Some(guard) => {
                el.write_inner_content(|w| {
                    w.create_element("bpmn:conditionExpression")
                        .with_attribute(("xsi:type", "bpmn:tFormalExpression"))
                        .write_text_content(BytesText::new(guard))?;
                    Ok(())
                })?;
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Fragments

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Boundary {
    pub in_flows: Vec<String>,
    pub out_flows: Vec<String>,
}

/// A region exported as standalone BPMN, wrapped in a synthetic start and
/// end event attached to its entry and exit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FragmentDoc {
    pub xml: String,
    pub entry_id: String,
    pub exit_id: String,
    pub boundary: Boundary,
}

/// The parsed content of a fragment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fragment {
    /// Standalone model including the synthetic start/end.
    pub model: ProcessModel,
    pub entry: String,
    pub exit: String,
}

impl Fragment {
    /// Elements excluding the synthetic start/end, in document order.
    pub fn members(&self) -> impl Iterator<Item = &Element> {
        self.model.elements.iter().filter(|e| !e.kind.is_event())
    }

    /// Flows between members, in document order.
    pub fn internal_flows(&self) -> impl Iterator<Item = &SequenceFlow> {
        let synthetic: BTreeSet<&str> = self
            .model
            .elements
            .iter()
            .filter(|e| e.kind.is_event())
            .map(|e| e.id.as_str())
            .collect();
        self.model
            .flows
            .iter()
            .filter(move |f| !synthetic.contains(f.source.as_str()) && !synthetic.contains(f.target.as_str()))
    }

    pub fn task_ids(&self) -> BTreeSet<String> {
        self.members()
            .filter(|e| e.kind == ElementKind::Task)
            .map(|e| e.id.clone())
            .collect()
    }
}

impl FragmentDoc {
    /// Wrap user-supplied fragment XML. Entry and exit are read off the
    /// synthetic start/end; the boundary is unknown until spliced.
    pub fn from_xml(xml: &str) -> Result<FragmentDoc, ModelError> {
        let fragment = parse_fragment(xml)?;
        Ok(FragmentDoc {
            xml: xml.to_string(),
            entry_id: fragment.entry,
            exit_id: fragment.exit,
            boundary: Boundary::default(),
        })
    }

    pub fn parse(&self) -> Result<Fragment, ModelError> {
        parse_fragment(&self.xml)
    }
}

pub fn parse_fragment(xml: &str) -> Result<Fragment, ModelError> {
    let model = parse_unchecked(xml)?;
    let start = single(&model, ElementKind::StartEvent)?;
    let end = single(&model, ElementKind::EndEvent)?;
    let out_of_start: Vec<&SequenceFlow> = model.flows.iter().filter(|f| f.source == start).collect();
    let into_end: Vec<&SequenceFlow> = model.flows.iter().filter(|f| f.target == end).collect();
    let (entry, exit) = match (out_of_start.as_slice(), into_end.as_slice()) {
        ([a], [b]) => (a.target.clone(), b.source.clone()),
        _ => {
            return Err(ModelError::NotSese(
                "the fragment start and end must each attach to exactly one element".into(),
            ))
        }
    };
    if entry == end || exit == start {
        return Err(ModelError::NotSese("fragment is empty".into()));
    }
    check_structure(
        &model,
        Some(Relax {
            entry: &entry,
            exit: &exit,
        }),
    )?;
    check_connected(&model, &start, &end)?;
    Ok(Fragment { model, entry, exit })
}

fn single(model: &ProcessModel, kind: ElementKind) -> Result<String, ModelError> {
    let mut it = model.elements.iter().filter(|e| e.kind == kind);
    match (it.next(), it.next()) {
        (Some(e), None) => Ok(e.id.clone()),
        _ => Err(ModelError::NotSese(format!("fragment needs exactly one {kind:?}"))),
    }
}

/// Every element must lie on a start-to-end path.
fn check_connected(model: &ProcessModel, start: &str, end: &str) -> Result<(), ModelError> {
    let reach = |from: &str, forward: bool| {
        let mut seen = BTreeSet::from([from.to_string()]);
        let mut stack = vec![from.to_string()];
        while let Some(n) = stack.pop() {
            for f in &model.flows {
                let (a, b) = if forward {
                    (&f.source, &f.target)
                } else {
                    (&f.target, &f.source)
                };
                if *a == n && seen.insert(b.clone()) {
                    stack.push(b.clone());
                }
            }
        }
        seen
    };
    let fwd = reach(start, true);
    let bwd = reach(end, false);
    match model
        .elements
        .iter()
        .find(|e| !fwd.contains(&e.id) || !bwd.contains(&e.id))
    {
        Some(e) => Err(ModelError::NotSese(format!(
            "element `{}` is not on an entry-to-exit path",
            e.id
        ))),
        None => Ok(()),
    }
}

struct Cut<'m> {
    internal: BTreeSet<&'m str>,
    in_flows: Vec<&'m SequenceFlow>,
    out_flows: Vec<&'m SequenceFlow>,
}

fn cut<'m>(model: &'m ProcessModel, region: &Region) -> Result<Cut<'m>, ModelError> {
    for m in &region.members {
        match model.element(m) {
            None => return Err(ModelError::RegionNotInModel(format!("unknown element `{m}`"))),
            Some(e) if e.kind.is_event() => {
                return Err(ModelError::RegionNotInModel(format!(
                    "event `{m}` cannot be a region member"
                )))
            }
            Some(_) => {}
        }
    }
    if !region.members.contains(&region.entry) || !region.members.contains(&region.exit) {
        return Err(ModelError::RegionNotInModel("entry and exit must be members".into()));
    }
    let mut c = Cut {
        internal: BTreeSet::new(),
        in_flows: Vec::new(),
        out_flows: Vec::new(),
    };
    for f in &model.flows {
        match (region.members.contains(&f.source), region.members.contains(&f.target)) {
            (true, true) => {
                c.internal.insert(f.id.as_str());
            }
            (false, true) => {
                if f.target != region.entry {
                    return Err(ModelError::RegionNotInModel(format!(
                        "flow `{}` enters the region at `{}` instead of its entry",
                        f.id, f.target
                    )));
                }
                c.in_flows.push(f);
            }
            (true, false) => {
                if f.source != region.exit {
                    return Err(ModelError::RegionNotInModel(format!(
                        "flow `{}` leaves the region from `{}` instead of its exit",
                        f.id, f.source
                    )));
                }
                c.out_flows.push(f);
            }
            (false, false) => {}
        }
    }
    Ok(c)
}

pub fn slice_fragment(model: &ProcessModel, region: &Region) -> Result<FragmentDoc, ModelError> {
    let c = cut(model, region)?;
    let elements: Vec<Element> = std::iter::once(Element {
        id: FRAGMENT_START.into(),
        kind: ElementKind::StartEvent,
        name: String::new(),
    })
    .chain(
        model
            .elements
            .iter()
            .filter(|e| region.members.contains(&e.id))
            .cloned(),
    )
    .chain(std::iter::once(Element {
        id: FRAGMENT_END.into(),
        kind: ElementKind::EndEvent,
        name: String::new(),
    }))
    .collect();
    let flows: Vec<SequenceFlow> = std::iter::once(SequenceFlow {
        id: FRAGMENT_IN_FLOW.into(),
        source: FRAGMENT_START.into(),
        target: region.entry.clone(),
        guard: None,
        is_default: false,
    })
    .chain(
        model
            .flows
            .iter()
            .filter(|f| c.internal.contains(f.id.as_str()))
            .cloned(),
    )
    .chain(std::iter::once(SequenceFlow {
        id: FRAGMENT_OUT_FLOW.into(),
        source: region.exit.clone(),
        target: FRAGMENT_END.into(),
        guard: None,
        is_default: false,
    }))
    .collect();
    let lanes = model
        .lanes
        .iter()
        .filter_map(|l| {
            let members: Vec<String> = l
                .members
                .iter()
                .filter(|m| region.members.contains(*m))
                .cloned()
                .collect();
            (!members.is_empty()).then(|| Lane {
                id: l.id.clone(),
                name: l.name.clone(),
                members,
            })
        })
        .collect();
    let fragment_model = ProcessModel {
        id: format!("{}_fragment", model.id),
        elements,
        flows,
        lanes,
        initial_vars: BTreeSet::new(),
        result_vars: BTreeSet::new(),
    };
    Ok(FragmentDoc {
        xml: serialize(&fragment_model),
        entry_id: region.entry.clone(),
        exit_id: region.exit.clone(),
        boundary: Boundary {
            in_flows: c.in_flows.iter().map(|f| f.id.clone()).collect(),
            out_flows: c.out_flows.iter().map(|f| f.id.clone()).collect(),
        },
    })
}

/// Replace the items matching `removed` with `replacement`, placed where the
/// first removed item was (or at the end when nothing was removed).
fn replace_block<T>(items: Vec<T>, removed: impl Fn(&T) -> bool, replacement: Vec<T>) -> Vec<T> {
    let mut out = Vec::with_capacity(items.len() + replacement.len());
    let mut replacement = Some(replacement);
    for item in items {
        if removed(&item) {
            if let Some(r) = replacement.take() {
                out.extend(r);
            }
        } else {
            out.push(item);
        }
    }
    if let Some(r) = replacement {
        out.extend(r);
    }
    out
}

pub fn splice_fragment(model: &ProcessModel, region: &Region, patch: &FragmentDoc) -> Result<ProcessModel, ModelError> {
    let fragment = patch.parse()?;
    let c = cut(model, region)?;

    let kept_ids: BTreeSet<&str> = model
        .elements
        .iter()
        .filter(|e| !region.members.contains(&e.id))
        .map(|e| e.id.as_str())
        .chain(
            model
                .flows
                .iter()
                .filter(|f| !c.internal.contains(f.id.as_str()))
                .map(|f| f.id.as_str()),
        )
        .collect();
    let new_elements: Vec<Element> = fragment.members().cloned().collect();
    let new_flows: Vec<SequenceFlow> = fragment.internal_flows().cloned().collect();
    for id in new_elements
        .iter()
        .map(|e| &e.id)
        .chain(new_flows.iter().map(|f| &f.id))
    {
        if kept_ids.contains(id.as_str()) {
            return Err(ModelError::IdCollision(id.clone()));
        }
    }

    let elements = replace_block(model.elements.clone(), |e| region.members.contains(&e.id), new_elements);

    let mut flows = replace_block(model.flows.clone(), |f| c.internal.contains(f.id.as_str()), new_flows);
    for f in &mut flows {
        if c.in_flows.iter().any(|cf| cf.id == f.id) {
            f.target = fragment.entry.clone();
        }
        if c.out_flows.iter().any(|cf| cf.id == f.id) {
            f.source = fragment.exit.clone();
        }
    }

    // Region members leave their lanes; patch lane members are inserted at
    // the position of the first removed member of the lane with the same
    // actor name, or form a new lane.
    let mut lanes: Vec<(Lane, usize)> = model
        .lanes
        .iter()
        .map(|l| {
            let at = l
                .members
                .iter()
                .position(|m| region.members.contains(m))
                .unwrap_or(l.members.len());
            let mut lane = l.clone();
            lane.members.retain(|m| !region.members.contains(m));
            (lane, at)
        })
        .collect();
    for patch_lane in &fragment.model.lanes {
        let incoming: Vec<String> = patch_lane
            .members
            .iter()
            .filter(|m| fragment.model.element(m).is_some_and(|e| !e.kind.is_event()))
            .cloned()
            .collect();
        if incoming.is_empty() {
            continue;
        }
        match lanes.iter_mut().find(|(l, _)| l.name == patch_lane.name) {
            Some((lane, at)) => {
                let at = (*at).min(lane.members.len());
                let tail = lane.members.split_off(at);
                lane.members.extend(incoming);
                lane.members.extend(tail);
            }
            None => {
                if kept_ids.contains(patch_lane.id.as_str()) || lanes.iter().any(|(l, _)| l.id == patch_lane.id) {
                    return Err(ModelError::IdCollision(patch_lane.id.clone()));
                }
                let n = incoming.len();
                lanes.push((
                    Lane {
                        id: patch_lane.id.clone(),
                        name: patch_lane.name.clone(),
                        members: incoming,
                    },
                    n,
                ));
            }
        }
    }
    let lanes = lanes.into_iter().map(|(l, _)| l).collect();

    let spliced = ProcessModel {
        id: model.id.clone(),
        elements,
        flows,
        lanes,
        initial_vars: model.initial_vars.clone(),
        result_vars: model.result_vars.clone(),
    };
    validate_model(&spliced)?;
    Ok(spliced)
}
