use std::collections::BTreeMap;

use super::lexicon::{GridCell, RelationKind};
use super::{find_cycle, PlanError, SubtaskId, SubtaskPlan};

/// Grid cell for each foreground subtask.
pub type GridAssignment = BTreeMap<SubtaskId, GridCell>;

#[derive(Clone, Copy, PartialEq)]
enum Axis {
    Row,
    Col,
}

/// Places every foreground subtask on the 3x3 grid so that each relation holds:
/// `above` puts the subject on a strictly smaller row, `left-of` on a strictly
/// smaller column, and `over` shares the target's cell unless constrained
/// otherwise. Vertical chains settle toward the bottom row; horizontal chains
/// spread from the left edge.
pub fn resolve_grid(plan: &SubtaskPlan) -> Result<GridAssignment, PlanError> {
    let nodes: Vec<SubtaskId> = plan.foreground().map(|s| s.id).collect();
    let mut vertical = Vec::new();
    let mut horizontal = Vec::new();
    let mut over = Vec::new();
    for s in plan.foreground() {
        for r in s.relations() {
            if r.target == s.id {
                return Err(PlanError::CyclicLayout(format!(
                    "subtask {} relates to itself",
                    s.id
                )));
            }
            match r.relation {
                RelationKind::Above => vertical.push((s.id, r.target)),
                RelationKind::Below => vertical.push((r.target, s.id)),
                RelationKind::LeftOf => horizontal.push((s.id, r.target)),
                RelationKind::RightOf => horizontal.push((r.target, s.id)),
                RelationKind::Over => over.push((r.target, s.id)),
            }
        }
    }
    for (name, edges) in [
        ("vertical", &vertical),
        ("horizontal", &horizontal),
        ("depth", &over),
    ] {
        if let Some(n) = find_cycle(&nodes, edges) {
            return Err(PlanError::CyclicLayout(format!(
                "{name} relations loop through subtask {n}"
            )));
        }
    }

    let anchors: BTreeMap<SubtaskId, GridCell> = plan
        .foreground()
        .filter_map(|s| s.anchor().map(|a| (s.id, a)))
        .collect();
    let over_targets: BTreeMap<SubtaskId, SubtaskId> = over.iter().map(|&(t, s)| (s, t)).collect();
    let depth_order = topo_order(&nodes, &over);

    let rows = solve_axis(
        Axis::Row,
        &nodes,
        &vertical,
        &anchors,
        &over_targets,
        &depth_order,
        None,
    )?;
    let cols = solve_axis(
        Axis::Col,
        &nodes,
        &horizontal,
        &anchors,
        &over_targets,
        &depth_order,
        Some(&rows),
    )?;
    Ok(nodes
        .iter()
        .map(|id| (*id, GridCell::at(rows[id], cols[id])))
        .collect())
}

fn topo_order(nodes: &[SubtaskId], edges: &[(SubtaskId, SubtaskId)]) -> Vec<SubtaskId> {
    let mut order = Vec::with_capacity(nodes.len());
    let mut indeg: BTreeMap<SubtaskId, usize> = nodes.iter().map(|&n| (n, 0)).collect();
    for &(_, v) in edges {
        *indeg.get_mut(&v).expect("node") += 1;
    }
    // stable: always take the earliest ready node in plan order
    while order.len() < nodes.len() {
        let next = *nodes
            .iter()
            .find(|n| indeg[n] == 0 && !order.contains(*n))
            .expect("acyclic");
        order.push(next);
        for &(u, v) in edges {
            if u == next {
                *indeg.get_mut(&v).expect("node") -= 1;
            }
        }
    }
    order
}

fn solve_axis(
    axis: Axis,
    nodes: &[SubtaskId],
    edges: &[(SubtaskId, SubtaskId)],
    anchors: &BTreeMap<SubtaskId, GridCell>,
    over_targets: &BTreeMap<SubtaskId, SubtaskId>,
    depth_order: &[SubtaskId],
    rows: Option<&BTreeMap<SubtaskId, usize>>,
) -> Result<BTreeMap<SubtaskId, usize>, PlanError> {
    let coord = |c: GridCell| match axis {
        Axis::Row => c.row(),
        Axis::Col => c.col(),
    };
    let mut lo: BTreeMap<SubtaskId, usize> = BTreeMap::new();
    let mut hi: BTreeMap<SubtaskId, usize> = BTreeMap::new();
    for &n in nodes {
        let (l, h) = anchors.get(&n).map_or((0, 2), |a| (coord(*a), coord(*a)));
        lo.insert(n, l);
        hi.insert(n, h);
    }
    let order = topo_order(nodes, edges);
    for &u in &order {
        for &(a, b) in edges.iter().filter(|(a, _)| *a == u) {
            let bound = lo[&a] + 1;
            let e = lo.get_mut(&b).expect("node");
            *e = (*e).max(bound);
        }
    }
    for &v in order.iter().rev() {
        for &(a, b) in edges.iter().filter(|(_, b)| *b == v) {
            let Some(bound) = hi[&b].checked_sub(1) else {
                return Err(PlanError::UnsatisfiableLayout(format!(
                    "chain through subtask {a} does not fit in three cells"
                )));
            };
            let e = hi.get_mut(&a).expect("node");
            *e = (*e).min(bound);
        }
    }
    for &n in nodes {
        if lo[&n] > hi[&n] {
            return Err(PlanError::UnsatisfiableLayout(format!(
                "subtask {n} cannot satisfy its relations and anchor"
            )));
        }
    }

    let constrained = |n: SubtaskId| edges.iter().any(|&(a, b)| a == n || b == n);
    let has_pred = |n: SubtaskId| edges.iter().any(|&(_, b)| b == n);
    let mut out = BTreeMap::new();
    for &n in nodes {
        if anchors.contains_key(&n) || constrained(n) {
            let v = match axis {
                Axis::Row => hi[&n],
                Axis::Col if has_pred(n) => hi[&n],
                Axis::Col => lo[&n],
            };
            out.insert(n, v);
        }
    }
    // unconstrained `over` subjects share their target's coordinate
    let follows_target = |n: SubtaskId| over_targets.contains_key(&n) && !out.contains_key(&n);
    let followers: Vec<SubtaskId> = depth_order
        .iter()
        .copied()
        .filter(|&n| follows_target(n))
        .collect();
    let free: Vec<SubtaskId> = nodes
        .iter()
        .copied()
        .filter(|n| !out.contains_key(n) && !followers.contains(n))
        .collect();
    match (axis, rows) {
        (Axis::Row, _) => {
            for n in free {
                out.insert(n, 1);
            }
        }
        (Axis::Col, Some(rows)) => {
            let mut by_row: BTreeMap<usize, Vec<SubtaskId>> = BTreeMap::new();
            for n in free {
                by_row.entry(rows[&n]).or_default().push(n);
            }
            for group in by_row.values() {
                let spread: &[usize] = match group.len() {
                    1 => &[1],
                    2 => &[0, 2],
                    _ => &[0, 1, 2],
                };
                for (i, n) in group.iter().enumerate() {
                    out.insert(*n, spread[i % spread.len()]);
                }
            }
        }
        (Axis::Col, None) => unreachable!("columns are solved after rows"),
    }
    for n in followers {
        let v = out[&over_targets[&n]];
        out.insert(n, v);
    }
    Ok(out)
}
