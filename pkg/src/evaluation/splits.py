# src/evaluation/splits.py

from typing import Dict, List, NamedTuple, Sequence, Tuple

import numpy as np

from src.config.settings import SplitSpec
from src.core.errors import DatasetError
from src.core.log import get_logger
from src.ingest.trace_reader import UNKNOWN_LABEL, FlowTrace

logger = get_logger(__name__)


class Split(NamedTuple):
    train: List[FlowTrace]
    test: List[FlowTrace]
    excluded: Tuple[str, ...]


def exclusion_schedule(classes: Sequence[str], spec: SplitSpec) -> List[Tuple[str, ...]]:
    """
    Какие типы исключаются на каждой итерации. Явный excluded_types - одинаково
    на всех итерациях; иначе классы по очереди из перестановки с seed,
    exclude_per_iteration за раз.
    """
    if spec.excluded_types:
        return [tuple(sorted(spec.excluded_types))] * spec.iteration_count
    m = spec.exclude_per_iteration
    if m == 0:
        return [()] * spec.iteration_count
    order = [classes[int(i)] for i in np.random.default_rng([spec.seed, 7]).permutation(len(classes))]
    if spec.iteration_count * m < len(classes):
        logger.warning(f"[Split] {spec.iteration_count}×{m} exclusions cannot cover all {len(classes)} classes")
    return [
        tuple(sorted({order[(it * m + j) % len(order)] for j in range(m)}))
        for it in range(spec.iteration_count)
    ]


def make_splits(flows: Sequence[FlowTrace], spec: SplitSpec) -> List[Split]:
    """
    Разбиения train/test на каждую итерацию. Исключённые типы попадают только
    в test и переименовываются в "unknown"; остальные классы (и реальные
    unknown-потоки) делятся train_fraction/остаток со стратификацией.
    """
    by_label: Dict[str, List[int]] = {}
    for i, f in enumerate(flows):
        if f.label is None:
            raise DatasetError(f"flow {i} ({f.key}) has no label")
        by_label.setdefault(f.label, []).append(i)
    for label, members in sorted(by_label.items()):
        if len(members) < 2:
            raise DatasetError(f"class '{label}' has {len(members)} flow(s); at least 2 are needed to stratify")
    classes = sorted(label for label in by_label if label != UNKNOWN_LABEL)
    missing = [t for t in spec.excluded_types if t not in by_label]
    if missing:
        raise DatasetError(f"excluded types not present in the dataset: {missing}")

    splits = []
    for it, excluded in enumerate(exclusion_schedule(classes, spec)):
        remaining = [c for c in classes if c not in excluded]
        if len(remaining) < 2:
            raise DatasetError(f"iteration {it}: fewer than 2 known classes remain after excluding {excluded}")
        rng = np.random.default_rng([spec.seed, it])
        train_idx: List[int] = []
        test_idx: List[int] = []
        for label in sorted(by_label):
            members = by_label[label]
            if label in excluded:
                test_idx.extend(members)
                continue
            shuffled = [members[int(j)] for j in rng.permutation(len(members))]
            n_train = min(max(int(round(spec.train_fraction * len(members))), 1), len(members) - 1)
            train_idx.extend(shuffled[:n_train])
            test_idx.extend(shuffled[n_train:])
        train = [flows[i] for i in sorted(train_idx)]
        test = [
            flows[i].with_label(UNKNOWN_LABEL) if flows[i].label in excluded else flows[i]
            for i in sorted(test_idx)
        ]
        splits.append(Split(train, test, excluded))
        logger.info(f"[Split] Iteration {it}: excluded {list(excluded)}, train {len(train)}, test {len(test)}")
    return splits
