//! Bounding volume hierarchy over surfel kernel boxes.
//!
//! Built with a binned surface-area heuristic; leaves hold at most
//! [`MAX_LEAF_SIZE`] surfels. Traversal is front-to-back: nodes are visited in
//! order of their entry distance and candidate hits are released only once no
//! unvisited node can produce a closer one, which lets alpha traversal stop
//! early without visiting the whole ray.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::ops::ControlFlow;

use glam::DVec3;

use super::{intersect_surfel, Aabb, Ray, Surfel, SurfelHit};

pub const MAX_LEAF_SIZE: usize = 4;
const SAH_BINS: usize = 12;
const TRAVERSAL_COST: f64 = 1.0;
const INTERSECT_COST: f64 = 1.0;

#[derive(Clone, Debug)]
struct Node {
    bounds: Aabb,
    /// Leaf: first index into `order`. Interior: index of the right child
    /// (the left child always follows its parent).
    offset: u32,
    /// Number of surfels for a leaf, zero for an interior node.
    count: u32,
}

#[derive(Clone, Debug)]
pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<u32>,
    len: usize,
}

struct BuildItem {
    bounds: Aabb,
    centroid: DVec3,
    index: u32,
}

impl Bvh {
    pub fn build(surfels: &[Surfel]) -> Self {
        let mut items: Vec<BuildItem> = surfels
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let bounds = s.bounds();
                BuildItem {
                    bounds,
                    centroid: bounds.center(),
                    index: i as u32,
                }
            })
            .collect();
        let mut nodes = Vec::with_capacity(2 * surfels.len().max(1) / MAX_LEAF_SIZE + 1);
        if !items.is_empty() {
            build_recursive(&mut items, 0, &mut nodes);
        }
        Bvh {
            nodes,
            order: items.into_iter().map(|it| it.index).collect(),
            len: surfels.len(),
        }
    }

    /// Number of surfels indexed.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Calls `visit` for every hit along `ray` in ascending `(t, index)`
    /// order until it returns `Break`.
    pub fn visit_ordered<F>(&self, surfels: &[Surfel], ray: &Ray, mut visit: F)
    where
        F: FnMut(&SurfelHit) -> ControlFlow<()>,
    {
        if self.nodes.is_empty() {
            return;
        }
        let inv_dir = ray.direction.recip();
        let mut pending_nodes: BinaryHeap<Entry<u32>> = BinaryHeap::new();
        let mut pending_hits: BinaryHeap<Entry<SurfelHit>> = BinaryHeap::new();
        if let Some(t) = self.nodes[0].bounds.ray_entry(ray.origin, inv_dir, ray.t_min, ray.t_max) {
            pending_nodes.push(Entry { t, key: 0, item: 0 });
        }
        loop {
            let horizon = pending_nodes.peek().map_or(f64::INFINITY, |e| e.t);
            while let Some(top) = pending_hits.peek() {
                if top.t >= horizon {
                    break;
                }
                let hit = pending_hits.pop().unwrap().item;
                if visit(&hit).is_break() {
                    return;
                }
            }
            let Some(Entry { item: node_index, .. }) = pending_nodes.pop() else {
                break;
            };
            let node = &self.nodes[node_index as usize];
            if node.count > 0 {
                let start = node.offset as usize;
                for &si in &self.order[start..start + node.count as usize] {
                    if let Some(hit) = intersect_surfel(ray, &surfels[si as usize], si as usize) {
                        pending_hits.push(Entry {
                            t: hit.t,
                            key: si as usize,
                            item: hit,
                        });
                    }
                }
            } else {
                for child in [node_index + 1, node.offset] {
                    let b = &self.nodes[child as usize].bounds;
                    if let Some(t) = b.ray_entry(ray.origin, inv_dir, ray.t_min, ray.t_max) {
                        pending_nodes.push(Entry {
                            t,
                            key: child as usize,
                            item: child,
                        });
                    }
                }
            }
        }
        debug_assert!(pending_hits.is_empty());
    }

    /// Every surfel index whose kernel box the ray passes through.
    pub fn candidates(&self, ray: &Ray) -> Vec<usize> {
        let mut out = Vec::new();
        if self.nodes.is_empty() {
            return out;
        }
        let inv_dir = ray.direction.recip();
        let mut stack = vec![0u32];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni as usize];
            if node.bounds.ray_entry(ray.origin, inv_dir, ray.t_min, ray.t_max).is_none() {
                continue;
            }
            if node.count > 0 {
                let start = node.offset as usize;
                out.extend(self.order[start..start + node.count as usize].iter().map(|&i| i as usize));
            } else {
                stack.push(ni + 1);
                stack.push(node.offset);
            }
        }
        out
    }
}

/// Min-heap entry ordered by `(t, key)`.
struct Entry<T> {
    t: f64,
    key: usize,
    item: T,
}

impl<T> PartialEq for Entry<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T> Eq for Entry<T> {}

impl<T> PartialOrd for Entry<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T> Ord for Entry<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed: BinaryHeap is a max-heap
        other.t.total_cmp(&self.t).then_with(|| other.key.cmp(&self.key))
    }
}

fn build_recursive(items: &mut [BuildItem], first: usize, nodes: &mut Vec<Node>) -> u32 {
    let bounds = items.iter().fold(Aabb::EMPTY, |b, it| b.union(it.bounds));
    let node_index = nodes.len() as u32;
    nodes.push(Node {
        bounds,
        offset: first as u32,
        count: items.len() as u32,
    });
    if items.len() <= MAX_LEAF_SIZE {
        return node_index;
    }

    let centroid_bounds = items.iter().fold(Aabb::EMPTY, |b, it| b.grow(it.centroid));
    let mid = match best_split(items, &bounds, &centroid_bounds) {
        Some((axis, pos)) => {
            let mid = partition(items, |it| it.centroid[axis] < pos);
            if mid == 0 || mid == items.len() {
                items.len() / 2
            } else {
                mid
            }
        }
        None => {
            // Degenerate centroids: median split on the widest axis.
            let axis = centroid_bounds.size().max_position();
            items.sort_by(|a, b| a.centroid[axis].total_cmp(&b.centroid[axis]).then(a.index.cmp(&b.index)));
            items.len() / 2
        }
    };

    let (left, right) = items.split_at_mut(mid);
    build_recursive(left, first, nodes);
    let right_index = build_recursive(right, first + mid, nodes);
    let node = &mut nodes[node_index as usize];
    node.offset = right_index;
    node.count = 0;
    node_index
}

/// Returns `(axis, split position)` of the cheapest binned SAH split, or
/// `None` when every centroid coincides.
fn best_split(items: &[BuildItem], bounds: &Aabb, centroid_bounds: &Aabb) -> Option<(usize, f64)> {
    let extent = centroid_bounds.size();
    let parent_area = bounds.surface_area().max(f64::MIN_POSITIVE);
    let mut best: Option<(f64, usize, f64)> = None;
    for axis in 0..3 {
        if extent[axis] <= 0.0 {
            continue;
        }
        let lo = centroid_bounds.min[axis];
        let scale = SAH_BINS as f64 / extent[axis];
        let mut bins = [(Aabb::EMPTY, 0usize); SAH_BINS];
        for it in items {
            let b = (((it.centroid[axis] - lo) * scale) as usize).min(SAH_BINS - 1);
            bins[b].0 = bins[b].0.union(it.bounds);
            bins[b].1 += 1;
        }
        let mut right_area = [0.0; SAH_BINS];
        let mut right_count = [0usize; SAH_BINS];
        let mut acc = (Aabb::EMPTY, 0usize);
        for b in (1..SAH_BINS).rev() {
            acc.0 = acc.0.union(bins[b].0);
            acc.1 += bins[b].1;
            right_area[b] = acc.0.surface_area();
            right_count[b] = acc.1;
        }
        let mut left = (Aabb::EMPTY, 0usize);
        for b in 1..SAH_BINS {
            left.0 = left.0.union(bins[b - 1].0);
            left.1 += bins[b - 1].1;
            if left.1 == 0 || right_count[b] == 0 {
                continue;
            }
            let cost = TRAVERSAL_COST
                + INTERSECT_COST
                    * (left.0.surface_area() * left.1 as f64 + right_area[b] * right_count[b] as f64)
                    / parent_area;
            if best.map_or(true, |(c, _, _)| cost < c) {
                best = Some((cost, axis, lo + b as f64 / scale));
            }
        }
    }
    best.map(|(_, axis, pos)| (axis, pos))
}

fn partition<T>(items: &mut [T], pred: impl Fn(&T) -> bool) -> usize {
    let mut mid = 0;
    for i in 0..items.len() {
        if pred(&items[i]) {
            items.swap(i, mid);
            mid += 1;
        }
    }
    mid
}
