//! 3D-torus geometry: tile addressing, neighbor links, ring distances and
//! dimension-order routing with deterministic detours around dead links.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("invalid topology '{0}': expected XxYxZ with positive sizes")]
    BadShape(String),
    #[error("coordinate ({x},{y},{z}) outside {dims}")]
    CoordOutOfRange { x: u32, y: u32, z: u32, dims: String },
    #[error("rank {rank} outside a {tiles}-tile torus")]
    RankOutOfRange { rank: u32, tiles: u32 },
    #[error("unknown link direction '{0}'")]
    BadDirection(String),
}

/// Linear tile index, x-major: `x + X * (y + Y * z)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rank(pub u32);

impl fmt::Display for Rank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Rank {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Coord {
    pub x: u32,
    pub y: u32,
    pub z: u32,
}

impl Coord {
    pub fn new(x: u32, y: u32, z: u32) -> Self {
        Coord { x, y, z }
    }

    fn axis(self, axis: usize) -> u32 {
        match axis {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }

    fn with_axis(mut self, axis: usize, v: u32) -> Self {
        match axis {
            0 => self.x = v,
            1 => self.y = v,
            _ => self.z = v,
        }
        self
    }
}

/// One of the six outgoing link directions of a tile.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    XPlus,
    XMinus,
    YPlus,
    YMinus,
    ZPlus,
    ZMinus,
}

impl Direction {
    pub const ALL: [Direction; 6] =
        [Direction::XPlus, Direction::XMinus, Direction::YPlus, Direction::YMinus, Direction::ZPlus, Direction::ZMinus];

    pub fn axis(self) -> usize {
        self.index() / 2
    }

    pub fn is_plus(self) -> bool {
        self.index().is_multiple_of(2)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Direction {
        Self::ALL[i]
    }

    pub fn along(axis: usize, plus: bool) -> Direction {
        Self::ALL[axis * 2 + usize::from(!plus)]
    }

    pub fn opposite(self) -> Direction {
        Direction::along(self.axis(), !self.is_plus())
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::XPlus => "+x",
            Direction::XMinus => "-x",
            Direction::YPlus => "+y",
            Direction::YMinus => "-y",
            Direction::ZPlus => "+z",
            Direction::ZMinus => "-z",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = TopologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Direction::ALL.into_iter().find(|d| d.as_str() == s).ok_or_else(|| TopologyError::BadDirection(s.to_string()))
    }
}

/// A directed link, identified by its source tile and outgoing direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinkId {
    pub src: Rank,
    pub dir: Direction,
}

impl LinkId {
    pub fn new(src: Rank, dir: Direction) -> Self {
        LinkId { src, dir }
    }
}

impl fmt::Display for LinkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "link({},{})", self.src, self.dir)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TorusGeometry {
    dims: [u32; 3],
}

impl fmt::Display for TorusGeometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.dims[0], self.dims[1], self.dims[2])
    }
}

impl FromStr for TorusGeometry {
    type Err = TopologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<_> = s.trim().split('x').collect();
        if parts.len() != 3 {
            return Err(TopologyError::BadShape(s.to_string()));
        }
        let mut dims = [0u32; 3];
        for (d, p) in dims.iter_mut().zip(parts) {
            *d = p.parse().map_err(|_| TopologyError::BadShape(s.to_string()))?;
        }
        TorusGeometry::new(dims[0], dims[1], dims[2]).map_err(|_| TopologyError::BadShape(s.to_string()))
    }
}

impl TorusGeometry {
    pub fn new(x: u32, y: u32, z: u32) -> Result<Self, TopologyError> {
        if x == 0 || y == 0 || z == 0 || (x as u64) * (y as u64) * (z as u64) > u32::MAX as u64 {
            return Err(TopologyError::BadShape(format!("{x}x{y}x{z}")));
        }
        Ok(TorusGeometry { dims: [x, y, z] })
    }

    pub fn dims(&self) -> [u32; 3] {
        self.dims
    }

    pub fn tiles(&self) -> u32 {
        self.dims.iter().product()
    }

    pub fn ranks(&self) -> impl Iterator<Item = Rank> {
        (0..self.tiles()).map(Rank)
    }

    pub fn contains(&self, r: Rank) -> bool {
        r.0 < self.tiles()
    }

    pub fn check_rank(&self, r: Rank) -> Result<Rank, TopologyError> {
        if self.contains(r) {
            Ok(r)
        } else {
            Err(TopologyError::RankOutOfRange { rank: r.0, tiles: self.tiles() })
        }
    }

    pub fn coords_to_rank(&self, c: Coord) -> Result<Rank, TopologyError> {
        let [x, y, z] = self.dims;
        if c.x >= x || c.y >= y || c.z >= z {
            return Err(TopologyError::CoordOutOfRange { x: c.x, y: c.y, z: c.z, dims: self.to_string() });
        }
        Ok(Rank(c.x + x * (c.y + y * c.z)))
    }

    pub fn rank_to_coords(&self, r: Rank) -> Result<Coord, TopologyError> {
        self.check_rank(r)?;
        let [x, y, _] = self.dims;
        Ok(Coord::new(r.0 % x, (r.0 / x) % y, r.0 / (x * y)))
    }

    fn coord(&self, r: Rank) -> Coord {
        self.rank_to_coords(r).expect("rank inside geometry")
    }

    fn rank(&self, c: Coord) -> Rank {
        self.coords_to_rank(c).expect("coordinate inside geometry")
    }

    pub fn neighbor(&self, r: Rank, dir: Direction) -> Rank {
        let c = self.coord(r);
        let axis = dir.axis();
        let n = self.dims[axis];
        let v = c.axis(axis);
        let nv = if dir.is_plus() { (v + 1) % n } else { (v + n - 1) % n };
        self.rank(c.with_axis(axis, nv))
    }

    /// The link traversed in the opposite direction.
    pub fn reverse(&self, l: LinkId) -> LinkId {
        LinkId::new(self.neighbor(l.src, l.dir), l.dir.opposite())
    }

    /// Canonical name for the bidirectional link containing `l`.
    pub fn undirected(&self, l: LinkId) -> LinkId {
        l.min(self.reverse(l))
    }

    /// Whether `l` loops back to its own source (axis of size 1).
    pub fn is_self_link(&self, l: LinkId) -> bool {
        self.dims[l.dir.axis()] == 1
    }

    /// All directed links that connect distinct tiles.
    pub fn links(&self) -> impl Iterator<Item = LinkId> + '_ {
        self.ranks()
            .flat_map(|r| Direction::ALL.into_iter().map(move |d| LinkId::new(r, d)))
            .filter(|l| !self.is_self_link(*l))
    }

    /// All bidirectional links, each named by its canonical directed half.
    pub fn undirected_links(&self) -> Vec<LinkId> {
        self.links().filter(|l| self.undirected(*l) == *l).collect()
    }

    fn displacement(&self, from: Coord, to: Coord, axis: usize) -> u32 {
        let n = self.dims[axis];
        (to.axis(axis) + n - from.axis(axis)) % n
    }

    pub fn hop_distance(&self, a: Rank, b: Rank) -> u32 {
        let (ca, cb) = (self.coord(a), self.coord(b));
        (0..3)
            .map(|axis| {
                let d = self.displacement(ca, cb, axis);
                d.min(self.dims[axis] - d)
            })
            .sum()
    }

    pub fn diameter(&self) -> u32 {
        self.dims.iter().map(|d| d / 2).sum()
    }

    /// Default misroute budget: four times the network diameter.
    pub fn default_ttl(&self) -> u32 {
        4 * self.diameter()
    }

    /// Preferred direction along `axis`, or `None` when already aligned.
    /// Ties between the two ring directions go to `+`.
    fn preferred(&self, cur: Coord, dst: Coord, axis: usize) -> Option<Direction> {
        let d = self.displacement(cur, dst, axis);
        if d == 0 {
            return None;
        }
        let n = self.dims[axis];
        Some(Direction::along(axis, d <= n - d))
    }

    /// The strict dimension-order hop on a healthy fabric.
    pub fn dor_hop(&self, cur: Rank, dst: Rank) -> Option<Direction> {
        let (c, d) = (self.coord(cur), self.coord(dst));
        (0..3).find_map(|axis| self.preferred(c, d, axis))
    }

    /// Next hop from `cur` towards `dst` given the link view `up`.
    ///
    /// Strict dimension order when the preferred link is up. Otherwise the
    /// remaining unaligned axes are tried in X, Y, Z order. If none is
    /// usable, the packet is misrouted over another healthy link, which costs
    /// one unit of `ttl`. A preferred hop that leads straight back to
    /// `prev_hop` counts as blocked; minimal routing never does that on a
    /// healthy fabric. Among misroute candidates the one closest to `dst` in
    /// the graph of links reported up wins, ties by direction order.
    pub fn route_next_hop<F>(
        &self,
        cur: Rank,
        dst: Rank,
        up: F,
        prev_hop: Option<Rank>,
        ttl: u32,
    ) -> Result<RouteStep, Undeliverable>
    where
        F: Fn(LinkId) -> bool,
    {
        if cur == dst {
            return Err(Undeliverable::NoRoute);
        }
        let (c, d) = (self.coord(cur), self.coord(dst));
        let healthy = |dir: Direction| {
            let l = LinkId::new(cur, dir);
            !self.is_self_link(l) && up(l)
        };
        let returns = |dir: Direction| Some(self.neighbor(cur, dir)) == prev_hop;
        if let Some(dir) =
            (0..3).filter_map(|axis| self.preferred(c, d, axis)).find(|&dir| healthy(dir) && !returns(dir))
        {
            return Ok(RouteStep { dir, misroute: false });
        }
        let healthy_dirs: Vec<Direction> = Direction::ALL.into_iter().filter(|&dir| healthy(dir)).collect();
        if healthy_dirs.is_empty() {
            return Err(Undeliverable::Isolated);
        }
        if ttl == 0 {
            return Err(Undeliverable::TtlExhausted);
        }
        let dist = self.distances_to(dst, &up);
        let pick = healthy_dirs
            .iter()
            .map(|&dir| (returns(dir), dist[self.neighbor(cur, dir).index()], dir))
            .min()
            .expect("non-empty");
        Ok(RouteStep { dir: pick.2, misroute: true })
    }

    /// Hop counts to `dst` over links reported up; `u32::MAX` if unreachable.
    fn distances_to<F>(&self, dst: Rank, up: &F) -> Vec<u32>
    where
        F: Fn(LinkId) -> bool,
    {
        let mut dist = vec![u32::MAX; self.tiles() as usize];
        dist[dst.index()] = 0;
        let mut queue = std::collections::VecDeque::from([dst]);
        while let Some(r) = queue.pop_front() {
            for dir in Direction::ALL {
                // the link entering `r` from this side
                let inbound = self.reverse(LinkId::new(r, dir));
                if self.is_self_link(inbound) || !up(inbound) {
                    continue;
                }
                let n = inbound.src;
                if dist[n.index()] == u32::MAX {
                    dist[n.index()] = dist[r.index()] + 1;
                    queue.push_back(n);
                }
            }
        }
        dist
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RouteStep {
    pub dir: Direction,
    /// The hop consumes one unit of the packet's misroute budget.
    pub misroute: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Error)]
pub enum Undeliverable {
    #[error("misroute budget exhausted")]
    TtlExhausted,
    #[error("no healthy outgoing link")]
    Isolated,
    #[error("no route")]
    NoRoute,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g422() -> TorusGeometry {
        "4x2x2".parse().unwrap()
    }

    #[test]
    fn parse_and_print() {
        assert_eq!(g422().to_string(), "4x2x2");
        assert!("4x0x2".parse::<TorusGeometry>().is_err());
        assert!("4x2".parse::<TorusGeometry>().is_err());
    }

    #[test]
    fn rank_layout() {
        let g = g422();
        assert_eq!(g.coords_to_rank(Coord::new(0, 0, 0)).unwrap(), Rank(0));
        assert_eq!(g.coords_to_rank(Coord::new(3, 1, 1)).unwrap(), Rank(15));
        assert!(g.coords_to_rank(Coord::new(4, 0, 0)).is_err());
        let mut seen = std::collections::BTreeSet::new();
        for z in 0..2 {
            for y in 0..2 {
                for x in 0..4 {
                    let c = Coord::new(x, y, z);
                    let r = g.coords_to_rank(c).unwrap();
                    assert!(seen.insert(r));
                    assert_eq!(g.rank_to_coords(r).unwrap(), c);
                }
            }
        }
        assert_eq!(seen.len(), 16);
    }

    #[test]
    fn neighbors_wrap() {
        let g = g422();
        let r = |x, y, z| g.coords_to_rank(Coord::new(x, y, z)).unwrap();
        assert_eq!(g.neighbor(r(3, 0, 0), Direction::XPlus), r(0, 0, 0));
        assert_eq!(g.neighbor(r(0, 1, 0), Direction::YMinus), r(0, 0, 0));
        let line: TorusGeometry = "4x1x1".parse().unwrap();
        assert_eq!(line.neighbor(Rank(2), Direction::ZPlus), Rank(2));
        assert!(line.is_self_link(LinkId::new(Rank(2), Direction::YMinus)));
    }

    #[test]
    fn distances() {
        let g = g422();
        let r = |x, y, z| g.coords_to_rank(Coord::new(x, y, z)).unwrap();
        assert_eq!(g.hop_distance(r(1, 1, 0), r(1, 1, 0)), 0);
        assert_eq!(g.hop_distance(r(0, 0, 0), r(2, 1, 1)), 4);
        assert_eq!(g.diameter(), 4);
        assert_eq!(g.default_ttl(), 16);
    }

    #[test]
    fn tie_goes_positive() {
        let g = g422();
        let step = g.route_next_hop(Rank(0), Rank(2), |_| true, None, 16).unwrap();
        assert_eq!(step, RouteStep { dir: Direction::XPlus, misroute: false });
    }

    #[test]
    fn blocked_x_falls_back_to_y() {
        let g = g422();
        let dst = g.coords_to_rank(Coord::new(1, 1, 0)).unwrap();
        let dead = LinkId::new(Rank(0), Direction::XPlus);
        let step = g.route_next_hop(Rank(0), dst, |l| l != dead, None, 16).unwrap();
        assert_eq!(step, RouteStep { dir: Direction::YPlus, misroute: false });
    }

    #[test]
    fn isolated_destination_runs_out_of_budget() {
        let g = g422();
        let dst = Rank(5);
        let up = |l: LinkId| l.src != dst && g.neighbor(l.src, l.dir) != dst;
        let (mut cur, mut prev, mut ttl) = (Rank(0), None, g.default_ttl());
        let mut hops = 0;
        let err = loop {
            match g.route_next_hop(cur, dst, up, prev, ttl) {
                Ok(step) => {
                    if step.misroute {
                        ttl -= 1;
                    }
                    prev = Some(cur);
                    cur = g.neighbor(cur, step.dir);
                    hops += 1;
                    assert!(hops < 1000);
                }
                Err(e) => break e,
            }
        };
        assert_eq!(err, Undeliverable::TtlExhausted);
        assert_eq!(ttl, 0);
    }

    #[test]
    fn reverse_and_undirected() {
        let g = g422();
        let l = LinkId::new(Rank(3), Direction::XPlus);
        assert_eq!(g.reverse(l), LinkId::new(Rank(0), Direction::XMinus));
        assert_eq!(g.undirected(l), g.undirected(g.reverse(l)));
        // 4x2x2: 16 tiles * 6 links / 2
        assert_eq!(g.undirected_links().len(), 48);
    }
}

#[cfg(test)]
mod walk_tests {
    use super::*;
    use std::collections::{BTreeSet, VecDeque};

    fn walk(g: &TorusGeometry, src: Rank, dst: Rank, dead: &BTreeSet<LinkId>) -> Result<u32, Undeliverable> {
        let (mut cur, mut prev, mut ttl, mut hops) = (src, None, g.default_ttl(), 0);
        while cur != dst {
            let step = g.route_next_hop(cur, dst, |l| !dead.contains(&l), prev, ttl)?;
            if step.misroute {
                ttl -= 1;
            }
            prev = Some(cur);
            cur = g.neighbor(cur, step.dir);
            hops += 1;
            assert!(hops < 10_000, "livelock");
        }
        Ok(hops)
    }

    fn bfs(g: &TorusGeometry, src: Rank, dead: &BTreeSet<LinkId>) -> Vec<Option<u32>> {
        let mut dist = vec![None; g.tiles() as usize];
        dist[src.index()] = Some(0);
        let mut q = VecDeque::from([src]);
        while let Some(r) = q.pop_front() {
            for d in Direction::ALL {
                let l = LinkId::new(r, d);
                if g.is_self_link(l) || dead.contains(&l) {
                    continue;
                }
                let n = g.neighbor(r, d);
                if dist[n.index()].is_none() {
                    dist[n.index()] = Some(dist[r.index()].unwrap() + 1);
                    q.push_back(n);
                }
            }
        }
        dist
    }

    #[test]
    fn single_link_down_all_connected_pairs_delivered() {
        for shape in ["4x2x2", "2x2x2", "3x3x1", "5x1x1", "4x4x2"] {
            let g: TorusGeometry = shape.parse().unwrap();
            for l in g.undirected_links() {
                let dead: BTreeSet<_> = [l, g.reverse(l)].into();
                for s in g.ranks() {
                    let reach = bfs(&g, s, &dead);
                    for d in g.ranks() {
                        if s == d || reach[d.index()].is_none() {
                            continue;
                        }
                        let hops = walk(&g, s, d, &dead).unwrap_or_else(|e| panic!("{shape} {l} {s}->{d}: {e}"));
                        assert!(hops >= reach[d.index()].unwrap());
                    }
                }
            }
        }
    }
}
