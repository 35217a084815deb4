import codecs
import logging
import os
from pathlib import Path
from typing import Generator, Iterator, List, Literal, Sequence, Tuple, Union

import numpy as np
import zstandard as zstd
from pydantic import ValidationError
from sklearn.neighbors import NearestNeighbors

from .coverage import CoverageInstance
from .errors import InstanceError, ParseError
from .ptas import PointSet
from .rounding import make_rng
from .routing import GridNetwork, RoutingRequest
from .schemas import InstanceDocument, RequestModel, RoutingReplay, canonical_json, content_hash

logger = logging.getLogger(__name__)

DemandMode = Literal["fixed3", "uniform1to5"]
FacilityFormat = Literal["orlib_points", "ufllib", "orlib_matrix"]

# bytes per read from a .zst stream
CHUNK_SIZE = 2**24
# draws per routing request before the grid is declared too small
MAX_REDRAWS = 1000


def stream_lines(file_path: Union[str, Path]) -> Generator[str, None, None]:
    """
    Yields the text lines of a file, blank ones included, so that line
    numbers stay meaningful. Files ending in .zst are decompressed on the fly
    in 16MB chunks.
    """
    file_path = str(file_path)
    if not os.path.exists(file_path):
        raise ParseError(file_path, None, "file not found")
    if not file_path.endswith(".zst"):
        with open(file_path, "r") as f:
            for line in f:
                yield line.rstrip("\n")
        return
    with open(file_path, "rb") as f:
        dctx = zstd.ZstdDecompressor(max_window_size=2147483648)
        with dctx.stream_reader(f) as reader:
            decoder = codecs.getincrementaldecoder("utf-8")(errors="replace")
            previous_line = ""
            while True:
                chunk = reader.read(CHUNK_SIZE)
                # a multi-byte character may straddle two chunks
                decoded = previous_line + decoder.decode(chunk, final=not chunk)
                if not chunk:
                    previous_line = decoded
                    break
                lines = decoded.split("\n")
                previous_line = lines[-1]
                for line in lines[:-1]:
                    yield line
            if previous_line:
                yield previous_line


def _tokens(file_path: Union[str, Path]) -> Iterator[Tuple[int, str]]:
    """(line number, token) pairs, skipping '#' comments."""
    for lineno, line in enumerate(stream_lines(file_path), start=1):
        line = line.split("#", 1)[0]
        for tok in line.split():
            yield lineno, tok


def _number(path, lineno: int, tok: str, kind=float):
    try:
        return kind(tok)
    except ValueError:
        raise ParseError(path, lineno, f"expected a number, got {tok!r}") from None


def gen_routing_instance(
    width: int,
    height: int,
    k: int,
    demand_mode: DemandMode,
    seed: int,
    routable_only: bool = True,
) -> Tuple[GridNetwork, List[RoutingRequest]]:
    """
    Random requests on a width x height grid.

    Endpoints are uniform over the vertices (the target is resampled while it
    equals the source); demands are all 3 or uniform on {1..5}.

    With `routable_only` a request whose demand exceeds the number of
    edge-disjoint paths between its endpoints is drawn again. Requests are
    independent, so this yields the same distribution as discarding every
    instance that contains such a request.
    """
    if k < 1:
        raise InstanceError(f"need at least one request, got k={k}")
    if demand_mode not in ("fixed3", "uniform1to5"):
        raise InstanceError(f"unknown demand mode: {demand_mode}")
    net = GridNetwork(width, height)
    if len(net.vertices) < 2:
        raise InstanceError("a routing grid needs at least two vertices")
    rng = make_rng(seed)
    requests = []
    for i in range(k):
        for _ in range(MAX_REDRAWS):
            s = net.vertices[int(rng.integers(len(net.vertices)))]
            t = s
            while t == s:
                t = net.vertices[int(rng.integers(len(net.vertices)))]
            demand = 3 if demand_mode == "fixed3" else int(rng.integers(1, 6))
            if not routable_only or net.disjoint_paths(s, t) >= demand:
                break
        else:
            raise InstanceError(
                f"request {i}: no routable endpoints after {MAX_REDRAWS} draws "
                f"on the {width}x{height} grid"
            )
        requests.append(RoutingRequest(source=s, target=t, demand=demand))
    return net, requests


def gen_chessboard(k: int) -> CoverageInstance:
    """King neighborhoods on a 3k x 3k board; budget k^2 admits a perfect tiling."""
    if k < 1:
        raise InstanceError(f"chessboard needs k >= 1, got {k}")
    side = 3 * k
    sets = []
    for r in range(side):
        for c in range(side):
            rows = range(max(0, r - 1), min(side, r + 2))
            cols = range(max(0, c - 1), min(side, c + 2))
            sets.append(np.array([rr * side + cc for rr in rows for cc in cols]))
    n = side * side
    return CoverageInstance(
        num_elements=n,
        sets=sets,
        costs=np.ones(n),
        weights=np.ones(n),
        budget=float(k * k),
        name=f"chessboard-{k}",
    )


def _is_prime(q: int) -> bool:
    if q < 2:
        return False
    return all(q % p for p in range(2, int(q**0.5) + 1))


def _projective_points(q: int) -> np.ndarray:
    pts = [(1, a, b) for a in range(q) for b in range(q)]
    pts += [(0, 1, a) for a in range(q)]
    pts.append((0, 0, 1))
    return np.array(pts, dtype=np.int64)


def gen_fpp(q: int) -> CoverageInstance:
    """
    Projective plane of prime order q.

    Elements are the q^2 + q + 1 points, sets are the lines (each with q + 1
    points); budget q.
    """
    if not _is_prime(q):
        raise InstanceError(f"q must be prime, got {q}")
    pts = _projective_points(q)
    incidence = (pts @ pts.T) % q == 0
    sets = [np.flatnonzero(incidence[:, j]) for j in range(len(pts))]
    n = len(pts)
    return CoverageInstance(
        num_elements=n,
        sets=sets,
        costs=np.ones(n),
        weights=np.ones(n),
        budget=float(q),
        name=f"fpp-{q}",
    )


def read_points(path: Union[str, Path], d: float) -> PointSet:
    """
    Reads "x y profit" lines; a leading single-number line (point count) and
    '#' comments are allowed.
    """
    coords, profits = [], []
    expected = None
    for lineno, raw in enumerate(stream_lines(path), start=1):
        tokens = raw.split("#", 1)[0].split()
        if not tokens:
            continue
        if len(tokens) == 1 and expected is None and not coords:
            expected = _number(path, lineno, tokens[0], int)
            continue
        if len(tokens) != 3:
            raise ParseError(path, lineno, f"expected 'x y profit', got {raw.strip()!r}")
        x, y, p = (_number(path, lineno, t) for t in tokens)
        coords.append((x, y))
        profits.append(p)
    if expected is not None and expected != len(coords):
        raise ParseError(path, None, f"header announces {expected} points, found {len(coords)}")
    return PointSet(points=np.array(coords).reshape(-1, 2), profits=np.array(profits), d=d)


def _drop_zero_weights(
    sets: Sequence[np.ndarray], weights: np.ndarray
) -> Tuple[List[np.ndarray], np.ndarray]:
    keep = weights > 0
    remap = np.cumsum(keep) - 1
    dropped = int((~keep).sum())
    if dropped:
        logger.info(f"Dropped {dropped} zero-weight elements")
    return [remap[s[keep[s]]] for s in sets], weights[keep]


def _read_ufllib(path: Union[str, Path]):
    """Simple UflLib layout: 'FILE:' header, 'n m 0', then 'index opening_cost c_1 .. c_m' per facility."""
    tokens = _tokens(path)
    first = next(tokens, None)
    if first is not None and first[1].upper().startswith("FILE"):
        # the file name runs until the size line
        header_line = first[0]
        first = next(tokens, None)
        while first is not None and first[0] == header_line:
            first = next(tokens, None)
    if first is None:
        raise ParseError(path, None, "empty file")
    n = _number(path, first[0], first[1], int)
    lineno, tok = next(tokens, (first[0], ""))
    m = _number(path, lineno, tok, int)
    next(tokens, None)
    dist = np.zeros((n, m))
    for j in range(n):
        try:
            lineno, _ = next(tokens)
            next(tokens)
            for i in range(m):
                lineno, tok = next(tokens)
                dist[j, i] = _number(path, lineno, tok)
        except StopIteration:
            raise ParseError(path, lineno, f"facility {j} row is truncated") from None
    return dist, np.ones(n), np.ones(m)


def _read_orlib_matrix(path: Union[str, Path], mstar_descale: bool):
    """
    ORLIB facility layout: 'm n', m lines 'capacity fixed_cost', then per
    customer its demand followed by m assignment costs.
    """
    tokens = _tokens(path)
    lineno = 0

    def take(kind=float):
        nonlocal lineno
        try:
            lineno, tok = next(tokens)
        except StopIteration:
            raise ParseError(path, lineno, "unexpected end of file") from None
        return _number(path, lineno, tok, kind)

    m, n = take(int), take(int)
    fixed = np.zeros(m)
    for j in range(m):
        take()
        fixed[j] = take()
    demand = np.zeros(n)
    dist = np.zeros((m, n))
    for i in range(n):
        demand[i] = take()
        if mstar_descale and demand[i] == 0:
            raise ParseError(path, lineno, f"customer {i} has zero demand; cannot de-scale")
        for j in range(m):
            dist[j, i] = take()
        if mstar_descale:
            dist[:, i] /= demand[i]
    return dist, fixed, demand


def convert_facility(
    path: Union[str, Path],
    fmt: FacilityFormat,
    d: float,
    mstar_descale: bool = False,
    budget: float = 1.0,
) -> CoverageInstance:
    """
    Turns a facility-location benchmark into max-coverage.

    Set j (a facility, or a point for point files) covers customer i when
    their distance is at most `d`. Point files use demands as profits and
    unit costs; ufllib files use unit costs and weights; orlib_matrix files
    use opening costs as set costs and demands as profits, optionally
    dividing assignment costs by demand first.

    Raises:
        ParseError: malformed file or zero demand under de-scaling.
    """
    if fmt == "orlib_points":
        if mstar_descale:
            raise ValueError("demand de-scaling applies to cost-matrix formats only")
        pts = read_points(path, d if 0 < d < np.inf else 1.0)
        if not np.isfinite(d):
            sets = [np.arange(len(pts)) for _ in range(len(pts))]
        elif len(pts):
            nn = NearestNeighbors(radius=max(d, 0.0)).fit(pts.points)
            sets = list(nn.radius_neighbors(pts.points, return_distance=False))
        else:
            sets = []
        costs, weights, coords = np.ones(len(pts)), pts.profits, pts.points
    elif fmt in ("ufllib", "orlib_matrix"):
        if fmt == "ufllib":
            dist, costs, weights = _read_ufllib(path)
        else:
            dist, costs, weights = _read_orlib_matrix(path, mstar_descale)
        sets = [np.flatnonzero(row <= d) for row in dist]
        coords = None
    else:
        raise ValueError(f"unknown facility format: {fmt}")

    if coords is not None and np.all(weights > 0):
        kept_sets, kept_weights = sets, weights
    else:
        kept_sets, kept_weights = _drop_zero_weights(sets, np.asarray(weights, dtype=float))
        coords = None
    logger.info(
        f"Converted {path} ({fmt}): {len(kept_sets)} sets, {len(kept_weights)} elements, d={d}"
    )
    return CoverageInstance(
        num_elements=len(kept_weights),
        sets=kept_sets,
        costs=costs,
        weights=kept_weights,
        budget=budget,
        name=Path(str(path)).name,
        points=coords,
    )


def to_document(instance: CoverageInstance) -> InstanceDocument:
    return InstanceDocument(
        name=instance.name,
        m=instance.num_elements,
        n=instance.num_sets,
        budget=float(instance.budget),
        costs=[float(c) for c in instance.costs],
        weights=[float(w) for w in instance.weights],
        sets=[[int(i) for i in s] for s in instance.sets],
        points=None if instance.points is None else [tuple(map(float, p)) for p in instance.points],
    )


def from_document(doc: InstanceDocument) -> CoverageInstance:
    return CoverageInstance(
        num_elements=doc.m,
        sets=[np.array(s, dtype=np.int64) for s in doc.sets],
        costs=np.array(doc.costs),
        weights=np.array(doc.weights),
        budget=doc.budget,
        name=doc.name,
        points=None if doc.points is None else np.array(doc.points, dtype=float),
    )


def instance_hash(instance: CoverageInstance) -> str:
    return content_hash(to_document(instance))


def save_instance(instance: CoverageInstance, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_json(to_document(instance)) + "\n")
    logger.info(f"Saved instance {instance.name or path.stem} to {path}")
    return path


def load_instance(path: Union[str, Path]) -> CoverageInstance:
    try:
        doc = InstanceDocument.model_validate_json(Path(path).read_text())
    except ValidationError as e:
        raise ParseError(path, None, f"invalid instance document: {e}") from e
    return from_document(doc)


def make_replay(
    width: int, height: int, demand_mode: DemandMode, seed: int, requests: Sequence[RoutingRequest]
) -> RoutingReplay:
    return RoutingReplay(
        width=width,
        height=height,
        demand_mode=demand_mode,
        seed=seed,
        requests=[
            RequestModel(source=r.source, target=r.target, demand=r.demand) for r in requests
        ],
    )


def save_replay(replay: RoutingReplay, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_json(replay) + "\n")
    return path


def load_replay(path: Union[str, Path]) -> Tuple[GridNetwork, List[RoutingRequest], RoutingReplay]:
    try:
        replay = RoutingReplay.model_validate_json(Path(path).read_text())
    except ValidationError as e:
        raise ParseError(path, None, f"invalid routing replay: {e}") from e
    net = GridNetwork(replay.width, replay.height)
    requests = [
        RoutingRequest(source=tuple(r.source), target=tuple(r.target), demand=r.demand)
        for r in replay.requests
    ]
    return net, requests, replay
