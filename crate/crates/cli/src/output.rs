//! CSV writers. Every file starts with a `# schema=` line naming its column
//! layout and version; records end with a bare LF.

use std::fs;
use std::path::Path;

use vhi_core::audit::AuditReport;
use vhi_core::contact::{BoundaryPart, ComplementarityReport, ContactProblem};
use vhi_core::history::{integrate_displacement, Trajectory};

use crate::CliError;

pub const TRAJECTORY_SCHEMA: &str = "vhi-trajectory/1";
pub const CONTACT_SCHEMA: &str = "vhi-contact/1";
pub const AUDIT_SCHEMA: &str = "vhi-audit/1";
pub const REFINEMENT_SCHEMA: &str = "vhi-refinement/1";

pub const TRAJECTORY_COLUMNS: [&str; 14] = [
    "step",
    "t",
    "node",
    "part",
    "x",
    "y",
    "ux",
    "uy",
    "vx",
    "vy",
    "normal_gap",
    "normal_traction",
    "tangential_traction",
    "slip",
];

/// Collects rows in memory and writes the file in one go.
pub struct Table {
    schema: &'static str,
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new(schema: &'static str, header: &[&str]) -> Self {
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        writer.write_record(header).expect("in-memory write");
        Self { schema, writer }
    }

    pub fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).expect("in-memory write");
    }

    pub fn into_bytes(self) -> Vec<u8> {
        let mut out = format!("# schema={}\n", self.schema).into_bytes();
        out.extend(self.writer.into_inner().expect("in-memory flush"));
        out
    }

    pub fn save(self, dir: &Path, name: &str) -> Result<String, CliError> {
        fs::write(dir.join(name), self.into_bytes()).map_err(|e| CliError::io(dir, e))?;
        Ok(name.to_string())
    }
}

pub fn num(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x}")
    }
}

pub fn part_name(part: Option<BoundaryPart>) -> &'static str {
    match part {
        None => "interior",
        Some(BoundaryPart::Clamped) => "clamped",
        Some(BoundaryPart::Traction) => "traction",
        Some(BoundaryPart::Unilateral) => "unilateral",
        Some(BoundaryPart::Compliance) => "compliance",
    }
}

/// One row per mesh node and time: position, displacement, velocity and,
/// on the contact boundary, gap, recovered tractions and slip.
pub fn trajectory_table(cp: &ContactProblem, traj: &Trajectory, report: &ComplementarityReport) -> Table {
    let scn = &cp.scenario;
    let mesh = &scn.mesh;
    let dofs = &cp.spaces.dofs;
    let u0 = scn.initial_displacement(dofs);
    let mut t = Table::new(TRAJECTORY_SCHEMA, &TRAJECTORY_COLUMNS);
    let per_step = cp.spaces.unilateral.len() + cp.spaces.compliance.len();
    for n in 0..traj.grid().len() {
        let u = integrate_displacement(traj, n, &u0, scn.rule()).expect("grid index in range");
        let w = traj.sample(n);
        let records = &report.records[n * per_step..(n + 1) * per_step];
        for node in 0..mesh.node_count() {
            let pos = mesh.nodes[node];
            let un = dofs.nodal(&u, node);
            let vn = dofs.nodal(w, node);
            let rec = records.iter().find(|r| r.node == node);
            let (gap, sn, st, slip) = rec.map_or((f64::NAN, f64::NAN, f64::NAN, f64::NAN), |r| {
                let slip = if r.part == BoundaryPart::Unilateral { r.slip } else { f64::NAN };
                (r.gap_residual, r.normal_traction, r.tangential_traction, slip)
            });
            t.row([
                n.to_string(),
                num(traj.grid().node(n)),
                node.to_string(),
                part_name(mesh.part(node)).to_string(),
                num(pos[0]),
                num(pos[1]),
                num(un[0]),
                num(un[1]),
                num(vn[0]),
                num(vn[1]),
                num(gap),
                num(sn),
                num(st),
                num(slip),
            ]);
        }
    }
    t
}

pub fn contact_table(report: &ComplementarityReport) -> Table {
    let mut t = Table::new(
        CONTACT_SCHEMA,
        &[
            "step",
            "t",
            "node",
            "part",
            "normal_velocity",
            "tangential_velocity",
            "gap_residual",
            "normal_traction",
            "tangential_traction",
            "normal_law",
            "normal_balance",
            "product",
            "friction_bound",
            "cone_slack",
            "sliding",
            "angle",
            "slip",
        ],
    );
    for r in &report.records {
        t.row([
            r.step.to_string(),
            num(r.t),
            r.node.to_string(),
            part_name(Some(r.part)).to_string(),
            num(r.normal_velocity),
            num(r.tangential_velocity),
            num(r.gap_residual),
            num(r.normal_traction),
            num(r.tangential_traction),
            num(r.normal_law),
            num(r.normal_balance),
            num(r.product),
            num(r.friction_bound),
            num(r.cone_slack),
            r.sliding.to_string(),
            num(r.angle),
            num(r.slip),
        ]);
    }
    t
}

pub fn audit_table(report: &AuditReport) -> Table {
    let mut t = Table::new(AUDIT_SCHEMA, &["name", "claimed", "estimate", "samples", "pass", "summary"]);
    t.row([
        "smallness-margin".to_string(),
        num(report.smallness.m_a),
        num(report.smallness.consumed),
        "0".to_string(),
        report.smallness.pass.to_string(),
        format!("margin {}", report.smallness.margin),
    ]);
    if let Some(c) = &report.contact_smallness {
        t.row([
            "contact-smallness".to_string(),
            num(c.rhs),
            num(c.safety_factor * c.lhs),
            "0".to_string(),
            c.pass.to_string(),
            format!("relative margin {}", c.relative_margin),
        ]);
    }
    for e in &report.entries {
        t.row([
            e.name.clone(),
            num(e.claimed),
            num(e.estimate),
            e.samples.to_string(),
            e.pass.to_string(),
            e.summary.clone(),
        ]);
    }
    t
}
