//! Tree-edit-distance similarity between table structures.
//!
//! Tables are rendered as ordered trees (`table` root, one `tr` per row,
//! `td` leaves carrying row/col spans) and compared with the classic
//! keyroot dynamic program for ordered-tree edit distance, with unit
//! insert/delete costs and 0/1 substitution cost.

use crate::annotation::{TableAnnotation, Violation};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeLabel {
    Table,
    Tr,
    Td,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub label: NodeLabel,
    pub rowspan: u32,
    pub colspan: u32,
    pub children: Vec<usize>,
}

/// Ordered tree describing table structure. The root is always a `table`
/// node; its children are `tr` rows; their children are `td` leaves.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureTree {
    pub nodes: Vec<TreeNode>,
    pub root: usize,
}

impl StructureTree {
    /// New tree holding only the `table` root.
    pub fn new() -> Self {
        let root = TreeNode { label: NodeLabel::Table, rowspan: 1, colspan: 1, children: vec![] };
        StructureTree { nodes: vec![root], root: 0 }
    }

    /// Appends a node under `parent` and returns its id.
    pub fn add_child(
        &mut self,
        parent: usize,
        label: NodeLabel,
        rowspan: u32,
        colspan: u32,
    ) -> usize {
        let id = self.nodes.len();
        self.nodes.push(TreeNode { label, rowspan, colspan, children: vec![] });
        self.nodes[parent].children.push(id);
        id
    }

    pub fn size(&self) -> usize {
        self.nodes.len()
    }

    /// Node ids in postorder (children left to right, then the node).
    fn postorder(&self) -> Vec<usize> {
        fn walk(tree: &StructureTree, node: usize, out: &mut Vec<usize>) {
            for &child in &tree.nodes[node].children {
                walk(tree, child, out);
            }
            out.push(node);
        }
        let mut out = Vec::with_capacity(self.nodes.len());
        walk(self, self.root, &mut out);
        out
    }
}

impl Default for StructureTree {
    fn default() -> Self {
        StructureTree::new()
    }
}

/// Builds the structure tree of an annotation: one `tr` per logical row in
/// order, each cell one `td` under the row it starts in, ordered by column.
///
/// Fails when two cells overlap logically (the tree would be ambiguous).
pub fn to_structure_tree(ann: &TableAnnotation) -> Result<StructureTree> {
    for a in 0..ann.cells.len() {
        for b in (a + 1)..ann.cells.len() {
            if ann.cells[a].logical.intersects(&ann.cells[b].logical) {
                return Err(Error::InvalidAnnotation(vec![Violation::LogicalOverlap { a, b }]));
            }
        }
    }

    let mut tree = StructureTree::new();
    let rows: Vec<usize> =
        (0..ann.num_rows()).map(|_| tree.add_child(0, NodeLabel::Tr, 1, 1)).collect();

    let mut order: Vec<usize> = (0..ann.cells.len()).collect();
    order.sort_by_key(|&i| (ann.cells[i].logical.row_start, ann.cells[i].logical.col_start));
    for i in order {
        let loc = ann.cells[i].logical;
        tree.add_child(
            rows[loc.row_start as usize],
            NodeLabel::Td,
            loc.row_span(),
            loc.col_span(),
        );
    }
    Ok(tree)
}

fn substitution_cost(a: &TreeNode, b: &TreeNode) -> u32 {
    let same = a.label == b.label && a.rowspan == b.rowspan && a.colspan == b.colspan;
    if same { 0 } else { 1 }
}

/// Per-tree tables for the edit-distance DP: nodes in postorder, leftmost
/// leaf of every subtree, and the keyroot indices.
struct Indexed<'t> {
    tree: &'t StructureTree,
    post: Vec<usize>,
    leftmost: Vec<usize>,
    keyroots: Vec<usize>,
}

impl<'t> Indexed<'t> {
    fn new(tree: &'t StructureTree) -> Self {
        let post = tree.postorder();
        let mut pos = vec![0usize; tree.nodes.len()];
        for (i, &id) in post.iter().enumerate() {
            pos[id] = i;
        }
        // leftmost[i] = postorder index of the leftmost leaf under post[i].
        let mut leftmost = vec![0usize; post.len()];
        for (i, &id) in post.iter().enumerate() {
            let mut node = id;
            while let Some(&first) = tree.nodes[node].children.first() {
                node = first;
            }
            leftmost[i] = pos[node];
        }
        // Keyroots: deepest node is NOT a keyroot iff a later node shares
        // its leftmost leaf (i.e. it is a leftmost child on some path).
        let mut last_with_l = std::collections::BTreeMap::new();
        for (i, &l) in leftmost.iter().enumerate() {
            last_with_l.insert(l, i);
        }
        // Ascending postorder index, so the DP has every smaller subtree
        // pair's distance in hand before a larger keyroot pair reads it.
        let mut keyroots: Vec<usize> = last_with_l.into_values().collect();
        keyroots.sort_unstable();
        Indexed { tree, post, leftmost, keyroots }
    }

    fn node(&self, post_index: usize) -> &TreeNode {
        &self.tree.nodes[self.post[post_index]]
    }
}

/// Ordered-tree edit distance with unit insert/delete and 0/1 substitution.
pub fn tree_edit_distance(t1: &StructureTree, t2: &StructureTree) -> u32 {
    let a = Indexed::new(t1);
    let b = Indexed::new(t2);
    let (n1, n2) = (a.post.len(), b.post.len());
    let mut td = vec![vec![0u32; n2]; n1];

    for &i in &a.keyroots {
        for &j in &b.keyroots {
            let (li, lj) = (a.leftmost[i], b.leftmost[j]);
            let m = i - li + 2;
            let n = j - lj + 2;
            let mut fd = vec![vec![0u32; n]; m];
            for di in 1..m {
                fd[di][0] = fd[di - 1][0] + 1;
            }
            for dj in 1..n {
                fd[0][dj] = fd[0][dj - 1] + 1;
            }
            for di in 1..m {
                for dj in 1..n {
                    let i1 = li + di - 1;
                    let j1 = lj + dj - 1;
                    let del = fd[di - 1][dj] + 1;
                    let ins = fd[di][dj - 1] + 1;
                    if a.leftmost[i1] == li && b.leftmost[j1] == lj {
                        // Both prefixes are whole subtrees: allow rename.
                        let ren = fd[di - 1][dj - 1] + substitution_cost(a.node(i1), b.node(j1));
                        fd[di][dj] = del.min(ins).min(ren);
                        td[i1][j1] = fd[di][dj];
                    } else {
                        let split =
                            fd[a.leftmost[i1] - li][b.leftmost[j1] - lj] + td[i1][j1];
                        fd[di][dj] = del.min(ins).min(split);
                    }
                }
            }
        }
    }

    td[n1 - 1][n2 - 1]
}

/// Structure similarity in [0, 1]: `1 - distance / max(size, size)`.
pub fn teds(t1: &StructureTree, t2: &StructureTree) -> f64 {
    let dist = tree_edit_distance(t1, t2) as f64;
    let denom = t1.size().max(t2.size()) as f64;
    1.0 - dist / denom
}
