"""Script execution: catalog lookup, partitioning, per-model dispatch.

A bound plan is partitioned, partitions run in topological order, and every
partition's result lands in a registry under its output node's alias key
(``n<id>``), where downstream partitions pick it up.  Relational and document
partitions run as operator trees; array partitions run node by node on tiled
arrays; inter-model partitions are the conversion / join bridge calls.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

from . import array_engine
from .array_store import StoredArray, array_from_coo_csv, array_to_coo_csv
from .bridge import (DimBinding, JoinOutputSpec, JoinStats, _extract_dims,
                     _infer_column_type, dispatch_join, to_array)
from .buffer_pool import BufferPool
from .errors import ConfigError, EngineError, NotFoundError, PlanError
from .models import (ABSENT, ArrayMeta, CellSchema, Collection, Relation,
                     collection_from_jsonl, collection_to_jsonl, dot_get,
                     relation_from_csv, relation_to_csv)
from .planner import (LogicalPlan, Partition, TreeNode, alias_key,
                      dag_to_trees, partition, partition_dag_to_dict,
                      plan_to_dict, topo_order)
from .predicates import parse_predicate, parse_sort_spec
from .rd_engine import execute_tree, node
from .script import bind_script

_EXT = {"relational": ".csv", "document": ".jsonl", "array": ".m2ar"}


@dataclass
class EngineConfig:
    data_dir: str = "."
    buffer_bytes: int = 64 << 20
    seed: int = 0
    default_tile: int = 0  # per-dimension tile extent; 0 = one tile per array
    layout: str = "dense"  # for arrays the engine materializes
    strategy: str = "auto"  # inter-model join routing
    spool_dir: str | None = None


class Catalog:
    """Datasets in a directory, one file per dataset, format by extension."""

    def __init__(self, data_dir: str):
        self.data_dir = data_dir

    def path(self, name: str, model: str) -> str:
        return os.path.join(self.data_dir, name + _EXT[model])

    def exists(self, name: str, model: str) -> bool:
        return os.path.isfile(self.path(name, model))

    def _read(self, name: str, model: str) -> str:
        p = self.path(name, model)
        if not os.path.isfile(p):
            raise NotFoundError(f"dataset {name!r} not found in "
                                f"{self.data_dir!r}")
        with open(p, "r", encoding="utf-8") as f:
            return f.read()

    def load_table(self, name: str) -> Relation:
        return relation_from_csv(self._read(name, "relational"))

    def load_collection(self, name: str) -> Collection:
        return collection_from_jsonl(self._read(name, "document"), name)

    def load_array(self, name: str, pool: BufferPool, *,
                   spool_dir: str | None = None) -> StoredArray:
        p = self.path(name, "array")
        if not os.path.isfile(p):
            raise NotFoundError(f"dataset {name!r} not found in "
                                f"{self.data_dir!r}")
        return StoredArray.load(p, pool, name=name, spool_dir=spool_dir)

    def count(self, name: str, model: str) -> int:
        if model == "relational":
            return len(self.load_table(name).rows)
        if model == "document":
            return len(self.load_collection(name).docs)
        raise ConfigError(f"cannot count a {model} dataset at bind time")

    # -- ingestion --------------------------------------------------------

    def ingest(self, fmt: str, src_path: str, name: str, *,
               size=None, tile=None, layout: str = "dense") -> str:
        """Validate an external file and store it under the catalog name.
        Returns the stored path."""
        if not os.path.isfile(src_path):
            raise NotFoundError(f"no such file: {src_path}")
        with open(src_path, "r", encoding="utf-8") as f:
            text = f.read()
        os.makedirs(self.data_dir, exist_ok=True)
        if fmt == "csv":
            rel = relation_from_csv(text)
            dst = self.path(name, "relational")
            payload = relation_to_csv(rel)
        elif fmt == "jsonl":
            col = collection_from_jsonl(text, name)
            dst = self.path(name, "document")
            payload = collection_to_jsonl(col)
        elif fmt == "coo":
            if not size:
                raise ConfigError("coo ingestion needs --size to fix the "
                                  "array extent")
            size = tuple(int(s) for s in size)
            tile = tuple(int(t) for t in tile) if tile else size
            header = text.splitlines()[0].split(",") if text.strip() else []
            d = len(size)
            if len(header) <= d:
                raise ConfigError("coo header needs dimension columns plus "
                                  "at least one value column")
            from .models import FLOAT
            schema = CellSchema(tuple(h.strip() for h in header[:d]),
                                tuple(h.strip() for h in header[d:]),
                                (FLOAT,) * (len(header) - d))
            meta = ArrayMeta(schema, size, tile, layout)
            pool = BufferPool(1 << 30)
            arr = array_from_coo_csv(text, meta, pool, name=name)
            dst = self.path(name, "array")
            arr.save(dst)
            return dst
        else:
            raise ConfigError(f"unknown ingestion format {fmt!r}")
        with open(dst, "w", encoding="utf-8") as f:
            f.write(payload)
        return dst


class Engine:
    def __init__(self, config: EngineConfig | None = None):
        self.config = config or EngineConfig()
        self.catalog = Catalog(self.config.data_dir)
        self.pool = BufferPool(self.config.buffer_bytes)
        self.join_stats: list[JoinStats] = []
        self._datasets: dict[tuple[str, str], object] = {}

    # -- entry points ------------------------------------------------------

    def plan_script(self, text: str) -> tuple[LogicalPlan, int]:
        return bind_script(text, self.catalog, self.config)

    def explain(self, text: str) -> dict:
        plan, target = self.plan_script(text)
        doc = plan_to_dict(plan)
        doc.update(partition_dag_to_dict(partition(plan)))
        doc["target"] = target
        return doc

    def run(self, text: str):
        plan, target = self.plan_script(text)
        return self.run_plan(plan, target)

    def run_plan(self, plan: LogicalPlan, target: int):
        pd = partition(plan)
        reg: dict[str, object] = {}
        for part in topo_order(pd):
            try:
                self._run_partition(plan, part, reg)
            except EngineError as e:
                e.partition = part.index  # which stage failed, for reporting
                raise
        return reg[alias_key(target)]

    # -- per-partition dispatch ---------------------------------------------

    def _run_partition(self, plan: LogicalPlan, part: Partition, reg: dict):
        if part.model in ("relational", "document"):
            self._run_rd_partition(plan, part, reg)
        elif part.model == "array":
            for nid in sorted(part.node_ids):  # inputs have lower ids
                reg[alias_key(nid)] = self._array_node(plan.node(nid), reg)
        else:
            nid = part.output_node
            reg[alias_key(nid)] = self._bridge_node(plan.node(nid), reg)

    def _run_rd_partition(self, plan, part, reg):
        scope = dict(reg)
        for nid in part.node_ids:
            n = plan.node(nid)
            if n.op == "scan":
                scope[n.params["name"]] = self._dataset(n.params["name"],
                                                        n.model)
        # nodes other partitions read must materialize under their alias keys
        cons = plan.consumers()
        exports = [nid for nid in part.node_ids
                   if any(c not in part.node_ids for c in cons[nid])]
        main, trees = dag_to_trees(plan, part, exports=exports)
        for key, tree in trees:
            value = execute_tree(_rd_tree(tree), scope)
            scope[key] = reg[key] = value
        reg[alias_key(part.output_node)] = execute_tree(_rd_tree(main), scope)

    def _dataset(self, name: str, model: str):
        key = (model, name)
        if key not in self._datasets:
            load = (self.catalog.load_table if model == "relational"
                    else self.catalog.load_collection)
            self._datasets[key] = load(name)
        return self._datasets[key]

    def _tile_for(self, size) -> tuple[int, ...]:
        dt = self.config.default_tile
        if dt <= 0:
            return tuple(size)
        return tuple(min(dt, s) for s in size)

    def _array_node(self, n, reg) -> StoredArray:
        ins = [reg[alias_key(i)] for i in n.inputs]
        p = n.params
        if n.op == "rand":
            size = tuple(p["size"])
            return array_engine.rand(size, self._tile_for(size), p["seed"],
                                     self.pool, spool_dir=self.config.spool_dir)
        if n.op == "scan_array":
            return self.catalog.load_array(p["name"], self.pool,
                                           spool_dir=self.config.spool_dir)
        if n.op == "matmul":
            return array_engine.matmul(ins[0], ins[1])
        if n.op == "transpose":
            return array_engine.transpose(ins[0])
        if n.op == "ewise":
            return array_engine.ewise(p["fn"], ins[0], ins[1])
        if n.op == "spatial_join":
            return array_engine.spatial_join_array(ins[0], ins[1])
        raise PlanError(f"unsupported array operator {n.op!r}")

    def _bridge_node(self, n, reg):
        p = n.params
        if n.op == "to_array":
            records = reg[alias_key(n.inputs[0])]
            meta = self._infer_meta(records, p["dims"], p["values"])
            return to_array(records, p["dims"], p["values"], meta, self.pool,
                            spool_dir=self.config.spool_dir)
        if n.op == "join_rel_array":
            records = reg[alias_key(n.inputs[0])]
            arr = reg[alias_key(n.inputs[1])]
            stats = JoinStats()
            res = dispatch_join(records, arr, parse_predicate(p["pred"]),
                                JoinOutputSpec(p["out_model"]),
                                rec_name=p["rec_name"],
                                arr_name=p["arr_name"],
                                strategy=self.config.strategy, stats=stats)
            self.join_stats.append(stats)
            return res
        raise PlanError(f"unsupported inter-model operator {n.op!r}")

    def _infer_meta(self, records, dims, values) -> ArrayMeta:
        """Array extent for a conversion: tight bounding box of the bound
        coordinates (dropped records don't count)."""
        matrix, kept = _extract_dims(records, DimBinding(tuple(dims)))
        if len(matrix):
            size = tuple(int(x) + 1 for x in matrix.max(axis=0))
        else:
            size = (1,) * len(dims)
        if isinstance(records, Relation):
            types = []
            for vn in values:
                try:
                    i = records.attr_index(vn)
                except KeyError:
                    raise NotFoundError(
                        f"no attribute {vn!r} to convert") from None
                types.append(records.schema[i][1])
        else:
            types = []
            for vn in values:
                seen = [dot_get(d, vn) for d in records.docs]
                types.append(_infer_column_type(
                    [v for v in seen if v is not None and v is not ABSENT]))
        schema = CellSchema(tuple(dims), tuple(values), tuple(types))
        return ArrayMeta(schema, size, self._tile_for(size),
                         self.config.layout)


def _rd_tree(t: TreeNode):
    """Planner tree -> executable tree: parse the textual predicate and sort
    arguments the script carried through JSON-safe plan params."""
    kids = [_rd_tree(c) for c in t.children]
    p = dict(t.params)
    if t.op in ("filter", "join") and isinstance(p.get("pred"), str):
        p["pred"] = parse_predicate(p["pred"])
    if t.op == "sort" and isinstance(p.get("keys"), str):
        p["keys"] = parse_sort_spec(p["keys"])
    if t.op == "aggregate":
        p["aggs"] = [tuple(a) for a in p.get("aggs", [])]
    return node(t.op, *kids, **p)


def run_script(path: str, config: EngineConfig | None = None, *,
               explain: bool = False):
    """Load and run a script file.  Returns ``(result, None)``, or
    ``(None, plan_document)`` when explaining instead of executing."""
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    engine = Engine(config)
    if explain:
        return None, engine.explain(text)
    return engine.run(text), None


def format_result(value) -> str:
    if isinstance(value, Relation):
        return relation_to_csv(value)
    if isinstance(value, Collection):
        return collection_to_jsonl(value)
    if isinstance(value, StoredArray):
        return array_to_coo_csv(value)
    return json.dumps(value, default=str)
