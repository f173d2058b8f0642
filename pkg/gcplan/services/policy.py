import logging
import math
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from gcplan.core.config import settings
from gcplan.core.errors import EmptyRouteError, LabelingError, TrainingDataError
from gcplan.models.graph import Edge, EdgeKind, LaneGraph, RouteMask
from gcplan.models.policy import (
    BASE_FEATURES,
    EdgeDistribution,
    EdgeScores,
    ScorerModel,
    ScorerParams,
    TrainingMode,
    TrainingResult,
)
from gcplan.models.scenario import AgentState, ScenarioRecord
from gcplan.observability.tracker import TrainingTracker
from gcplan.services.lane_graph import compute_route_mask
from gcplan.utils.geometry import wrap_angle
from gcplan.utils.rng import derive_seed

logger = logging.getLogger(__name__)

NLL_FLOOR = 1e-12
_KIND_COLUMN = {EdgeKind.SUCCESSOR: 3, EdgeKind.PROXIMAL: 4, EdgeKind.TERMINAL: 5}


def edge_features(
    graph: LaneGraph,
    edge: Edge,
    sdv_state: AgentState,
    node_features_ablation: Optional[RouteMask] = None,
) -> np.ndarray:
    """
    Geometric features of one outgoing edge as seen from the SDV.

    Entries: heading alignment, signed lateral offset (left positive),
    longitudinal gap, kind one-hot (successor, proximal, terminal), SDV speed
    and target curvature. A ninth on-route entry is appended when the
    ablation mask is supplied.
    """
    heading_unit = np.array([math.cos(sdv_state.heading), math.sin(sdv_state.heading)])
    sdv_xy = np.array([sdv_state.x, sdv_state.y])
    features = np.zeros(BASE_FEATURES + (1 if node_features_ablation is not None else 0))

    if edge.is_terminal:
        source = graph.nodes[edge.source]
        features[0] = math.cos(sdv_state.heading - source.end_heading)
        features[2] = float(np.dot(source.xy[-1] - sdv_xy, heading_unit))
    else:
        target = graph.nodes[edge.target]
        features[0] = math.cos(sdv_state.heading - target.end_heading)
        features[1] = target.polyline.project(sdv_xy).lateral
        features[2] = float(np.dot(target.xy[0] - sdv_xy, heading_unit))
        if target.arc_length > 1e-6:
            turn = wrap_angle(target.end_heading - target.start_heading)
            features[7] = turn / target.arc_length
    features[_KIND_COLUMN[edge.kind]] = 1.0
    features[6] = sdv_state.v
    if node_features_ablation is not None:
        on_route = edge.is_terminal or edge.target in node_features_ablation.on_route_nodes
        features[BASE_FEATURES] = 1.0 if on_route else 0.0
    return features


def graph_features(
    graph: LaneGraph,
    sdv_state: AgentState,
    node_features_ablation: Optional[RouteMask] = None,
) -> Tuple[np.ndarray, ...]:
    """Feature matrices per node, rows aligned with the node's outgoing edges."""
    return tuple(
        np.vstack([edge_features(graph, edge, sdv_state, node_features_ablation) for edge in edges])
        for edges in graph.out_edges
    )


def _scales(feature_count: int) -> np.ndarray:
    return np.asarray(settings.FEATURE_SCALES[:feature_count], dtype=float)


def _forward(params: ScorerParams, features: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    scaled = features / _scales(features.shape[-1])
    pre = scaled @ params.w1 + params.b1
    hidden = np.maximum(pre, 0.0)
    return hidden @ params.w2 + params.b2, scaled, pre


def score_features(params: ScorerParams, features: np.ndarray) -> np.ndarray:
    return _forward(params, features)[0]


def score_edges(
    params: ScorerParams,
    graph: LaneGraph,
    sdv_state: AgentState,
    ablation_mask: Optional[RouteMask] = None,
) -> EdgeScores:
    """Raw scores for every outgoing edge of every node."""
    if not params.is_finite():
        raise ValueError("scorer parameters must be finite")
    features = graph_features(graph, sdv_state, ablation_mask)
    if features and features[0].shape[1] != params.feature_count:
        raise ValueError(
            f"scorer expects {params.feature_count} features, graph yields {features[0].shape[1]}"
        )
    return EdgeScores(edges=graph.out_edges, values=tuple(score_features(params, f) for f in features))


def _softmax(values: np.ndarray) -> np.ndarray:
    shifted = np.exp(values - np.max(values))
    return shifted / shifted.sum()


def softmax_per_node(scores: EdgeScores) -> EdgeDistribution:
    for node, values in enumerate(scores.values):
        if len(values) == 0:
            raise ValueError(f"node {node} has no outgoing edges")
    probs = tuple(_softmax(np.asarray(v, dtype=float)) for v in scores.values)
    return EdgeDistribution(edges=scores.edges, probs=probs)


def initial_params(
    seed: int, feature_count: int = BASE_FEATURES, hidden_units: int = settings.HIDDEN_UNITS
) -> ScorerParams:
    """Seeded initialization, uniform in [-0.1, 0.1]."""
    rng = np.random.default_rng(seed)
    return ScorerParams(
        w1=rng.uniform(-0.1, 0.1, size=(feature_count, hidden_units)),
        b1=rng.uniform(-0.1, 0.1, size=hidden_units),
        w2=rng.uniform(-0.1, 0.1, size=hidden_units),
        b2=float(rng.uniform(-0.1, 0.1)),
    )


@dataclass(frozen=True, eq=False)
class TrainingBatch:
    """Padded node-level examples.

    features: (N, E, F); valid / on_route: (N, E) booleans; labels: (N,) expert edge column.
    """

    features: np.ndarray
    valid: np.ndarray
    on_route: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, index) -> "TrainingBatch":
        return TrainingBatch(self.features[index], self.valid[index], self.on_route[index], self.labels[index])


def _pad_examples(examples: List[Tuple[np.ndarray, np.ndarray, int]], feature_count: int) -> TrainingBatch:
    width = max(len(f) for f, _, _ in examples)
    n = len(examples)
    features = np.zeros((n, width, feature_count))
    valid = np.zeros((n, width), dtype=bool)
    on_route = np.zeros((n, width), dtype=bool)
    labels = np.zeros(n, dtype=int)
    for i, (f, mask, label) in enumerate(examples):
        features[i, : len(f)] = f
        valid[i, : len(f)] = True
        on_route[i, : len(f)] = mask
        labels[i] = label
    return TrainingBatch(features, valid, on_route, labels)


def scenario_examples(record: ScenarioRecord, mode: TrainingMode) -> List[Tuple[np.ndarray, np.ndarray, int]]:
    """Node-level training examples (features, on-route mask, expert edge column) of one scenario."""
    from gcplan.services.scenario import expert_traversal

    traversal = expert_traversal(record)
    graph = record.graph
    try:
        route = compute_route_mask(graph, record.start_node, record.goal_node)
    except EmptyRouteError:
        route = None
    ablation = None
    if mode == TrainingMode.NODE_FEATURES:
        ablation = route if route is not None else _empty_mask()
    examples = []
    visited = list(traversal.nodes)
    for i, node in enumerate(visited):
        edges = graph.edges_from(node)
        if i + 1 < len(visited):
            target = visited[i + 1]
        elif traversal.terminated:
            target = -1
        else:
            break
        label = next(j for j, edge in enumerate(edges) if edge.target == target)
        features = np.vstack([edge_features(graph, edge, record.sdv_state, ablation) for edge in edges])
        mask = route.edge_mask(edges) if route is not None else np.array([edge.is_terminal for edge in edges])
        examples.append((features, mask, label))
    return examples


def _empty_mask() -> RouteMask:
    return RouteMask(on_route_nodes=frozenset(), route_edges=frozenset())


def _masked_softmax(scores: np.ndarray, valid: np.ndarray) -> np.ndarray:
    masked = np.where(valid, scores, -np.inf)
    shifted = np.exp(masked - masked.max(axis=1, keepdims=True))
    return shifted / shifted.sum(axis=1, keepdims=True)


def _loss_terms(
    scores: np.ndarray, batch: TrainingBatch, mode: TrainingMode, beta: float
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-example NLL, dL/dscores and dL/dbeta under the mode's conditioning."""
    n = len(batch)
    rows = np.arange(n)
    pi = _masked_softmax(scores, batch.valid)
    onehot = np.zeros_like(pi)
    onehot[rows, batch.labels] = 1.0
    m = (batch.on_route & batch.valid).astype(float)
    p_on = np.maximum((pi * m).sum(axis=1), 1e-300)
    pi_e = pi[rows, batch.labels]
    grad_beta = np.zeros(n)

    if mode == TrainingMode.HARD_MASK_AT_TRAIN:
        # an off-route expert edge has zero masked probability; its loss sits at the floor
        expert_on = m[rows, batch.labels] > 0
        prob = np.where(expert_on, pi_e / p_on, 0.0)
        grad = np.where(expert_on[:, None], -onehot + m * pi / p_on[:, None], 0.0)
    elif mode == TrainingMode.SOFT_MASK:
        expert_on = m[rows, batch.labels] > 0
        prob = np.where(expert_on, pi_e * (1.0 + beta / p_on), pi_e) / (1.0 + beta)
        d_pon = pi * (m - p_on[:, None])
        grad = pi - onehot
        correction = -d_pon / (p_on + beta)[:, None] + d_pon / p_on[:, None]
        grad = np.where(expert_on[:, None], grad + correction, grad)
        grad_beta = np.where(expert_on, -1.0 / (p_on + beta), 0.0) + 1.0 / (1.0 + beta)
    else:
        prob = pi_e
        grad = pi - onehot
    grad = np.where(batch.valid, grad, 0.0)
    nll = -np.log(np.maximum(prob, NLL_FLOOR))
    return nll, grad, grad_beta


def scorer_loss_and_grad(
    params: ScorerParams, batch: TrainingBatch, mode: TrainingMode, beta: float = 0.0
) -> Tuple[float, ScorerParams, float]:
    """Mean expert-edge NLL over the batch with its analytic gradient (params, beta)."""
    scores, scaled, pre = _forward(params, batch.features)
    nll, grad_s, grad_beta = _loss_terms(scores, batch, mode, beta)
    n = len(batch)
    grad_s = grad_s / n
    hidden = np.maximum(pre, 0.0)
    d_w2 = np.einsum("ne,neh->h", grad_s, hidden)
    d_b2 = float(grad_s.sum())
    d_pre = grad_s[..., None] * params.w2 * (pre > 0)
    d_w1 = np.einsum("nef,neh->fh", scaled, d_pre)
    d_b1 = d_pre.sum(axis=(0, 1))
    grads = ScorerParams(w1=d_w1, b1=d_b1, w2=d_w2, b2=d_b2)
    return float(nll.mean()), grads, float(grad_beta.mean())


def batch_nll(params: ScorerParams, batch: TrainingBatch, mode: TrainingMode, beta: float = 0.0) -> float:
    if len(batch) == 0:
        return float("nan")
    scores = score_features(params, batch.features)
    return float(_loss_terms(scores, batch, mode, beta)[0].mean())


def _collect(records: Iterable[ScenarioRecord], mode: TrainingMode) -> Tuple[List, int]:
    examples, excluded = [], 0
    for record in records:
        try:
            examples.extend(scenario_examples(record, mode))
        except LabelingError as e:
            excluded += 1
            logger.warning(f"Excluding scenario {record.scenario_id} from training: {e}")
    return examples, excluded


def split_holdout(records: Sequence[ScenarioRecord], fraction: float, seed: int) -> Tuple[List, List]:
    """Seeded train/held-out split; tiny sets are evaluated on the training records."""
    order = np.random.default_rng(derive_seed(seed, "holdout")).permutation(len(records))
    n_hold = int(round(fraction * len(records)))
    if n_hold == 0 or n_hold >= len(records):
        return list(records), list(records)
    holdout = [records[i] for i in sorted(order[:n_hold])]
    train = [records[i] for i in sorted(order[n_hold:])]
    return train, holdout


def train_scorer(
    scenarios: Sequence[ScenarioRecord],
    epochs: int,
    learning_rate: float,
    seed: int,
    mode: TrainingMode = TrainingMode.UNCONDITIONED,
    batch_size: int = settings.BATCH_SIZE,
    holdout_fraction: float = settings.HOLDOUT_FRACTION,
    hidden_units: int = settings.HIDDEN_UNITS,
) -> TrainingResult:
    """
    Behaviour-clone the edge scorer on expert traversals.

    Args:
        scenarios: Training scenarios; records without a valid label are excluded
        epochs: Number of passes over the training examples
        learning_rate: Fixed gradient-descent step size
        seed: Seed for initialization, held-out split and shuffling
        mode: Conditioning applied to the distribution before the loss

    Returns:
        TrainingResult with the final model and train / held-out NLL

    Raises:
        TrainingDataError: If no training example remains
    """
    mode = TrainingMode(mode)
    if not scenarios:
        raise TrainingDataError("training set is empty")
    train_records, holdout_records = split_holdout(list(scenarios), holdout_fraction, seed)
    train_examples, excluded = _collect(train_records, mode)
    holdout_examples, _ = _collect(holdout_records, mode)
    if mode == TrainingMode.HARD_MASK_AT_TRAIN:
        kept = [ex for ex in train_examples if ex[1][ex[2]]]
        if len(kept) < len(train_examples):
            logger.warning(f"Dropping {len(train_examples) - len(kept)} examples whose expert edge leaves the route")
        train_examples = kept
    if not train_examples:
        raise TrainingDataError("no training example remains after labelling")

    feature_count = mode.feature_count
    train = _pad_examples(train_examples, feature_count)
    holdout = _pad_examples(holdout_examples, feature_count) if holdout_examples else train
    params = initial_params(seed, feature_count, hidden_units)
    beta = 0.0
    initial_holdout = batch_nll(params, holdout, mode, beta)
    shuffle_rng = np.random.default_rng(derive_seed(seed, "shuffle"))

    with TrainingTracker(mode.value) as tracker:
        for epoch in range(epochs):
            order = shuffle_rng.permutation(len(train))
            for start in range(0, len(order), batch_size):
                batch = train.subset(order[start : start + batch_size])
                _, grads, grad_beta = scorer_loss_and_grad(params, batch, mode, beta)
                params = ScorerParams(
                    w1=params.w1 - learning_rate * grads.w1,
                    b1=params.b1 - learning_rate * grads.b1,
                    w2=params.w2 - learning_rate * grads.w2,
                    b2=params.b2 - learning_rate * grads.b2,
                )
                if mode == TrainingMode.SOFT_MASK:
                    beta = max(0.0, beta - learning_rate * grad_beta)
                tracker.record_step()
            logger.debug(f"epoch {epoch + 1}/{epochs}: train NLL {batch_nll(params, train, mode, beta):.4f}")

        train_nll = batch_nll(params, train, mode, beta)
        holdout_nll = batch_nll(params, holdout, mode, beta)
        tracker.record_nll(train_nll, holdout_nll)

    logger.info(
        f"Trained {mode.value} scorer on {len(train)} examples: "
        f"train NLL {train_nll:.4f}, held-out NLL {holdout_nll:.4f} (init {initial_holdout:.4f})"
    )
    model = ScorerModel(mode=mode, params=params, beta=beta if mode == TrainingMode.SOFT_MASK else None)
    return TrainingResult(
        model=model,
        train_nll=train_nll,
        holdout_nll=holdout_nll,
        initial_holdout_nll=initial_holdout,
        train_examples=len(train),
        holdout_examples=len(holdout),
        excluded_scenarios=excluded,
    )


def edge_distribution(
    model: ScorerModel, graph: LaneGraph, sdv_state: AgentState, route: Optional[RouteMask] = None
) -> EdgeDistribution:
    """Unmasked per-node distribution for a model, adding the route feature when the model uses it."""
    ablation = None
    if model.uses_route_feature:
        ablation = route if route is not None else _empty_mask()
    return softmax_per_node(score_edges(model.params, graph, sdv_state, ablation))

