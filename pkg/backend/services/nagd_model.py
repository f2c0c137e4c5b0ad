"""
Decodificador de objetivos no autorregresivo (NAGD) a escala de escritorio.

Un codificador pequeño produce el vector del problema E_s y un vector por
número E_V. Cada objetivo se descompone en 8 ranuras en paralelo: atención
entre ranuras (opcionalmente entre objetivos hermanos), atención contra el
banco de candidatos y un puntero que elige operador, constante, número o el
terminador N_b. Las ranuras de operador generan los objetivos del nivel
siguiente con su propio vector Ê_p.

Orden del banco de candidatos: [4 operadores][N_b][constantes][números].

La atención entre ranuras es causal por posición: la ranura i de un objetivo
solo ve las ranuras j <= i, y de un hermano nunca más allá de su N_b. Así las
ranuras posteriores al terminador no influyen en nada.
"""
import math
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Protocol, Sequence, Tuple, Union

import torch
import torch.nn as nn
import torch.nn.functional as F

from models.errors import (
    ConfigError,
    DatasetSchemaError,
    DecodeError,
    MalformedTreeError,
    ReciprocalOfZeroError,
    UnknownTokenError,
)
from models.schemas import NagdConfig
from services.expr_parser import Quantity, QuantityOrigin
from services.mtree_service import (
    LEAF_FORMS,
    OPERATORS,
    MLeaf,
    MNode,
    MOp,
    MTree,
    eval_mtree,
    make_node,
    mtree_key,
    validate_mtree,
)

logger = logging.getLogger(__name__)

NB_INDEX = len(OPERATORS)
CONSTANT_OFFSET = NB_INDEX + 1


class ProblemLike(Protocol):
    tokens: List[str]
    number_positions: List[int]
    numbers: List[Fraction]
    tree: MTree


# ----------------------------------------------------------------------
# Vocabulario y banco de candidatos
# ----------------------------------------------------------------------

class Vocabulary:
    """Vocabulario cerrado; los tokens numéricos se codifican como [NUM]."""

    PAD, CLS, NUM = "[PAD]", "[CLS]", "[NUM]"

    def __init__(self, tokens: Sequence[str]):
        specials = [self.PAD, self.CLS, self.NUM]
        self.itos = specials + sorted(set(tokens) - set(specials))
        self.stoi = {token: i for i, token in enumerate(self.itos)}

    def __len__(self) -> int:
        return len(self.itos)

    @classmethod
    def build(cls, problems: Sequence[ProblemLike]) -> "Vocabulary":
        words = set()
        for problem in problems:
            positions = set(problem.number_positions)
            words.update(t for i, t in enumerate(problem.tokens) if i not in positions)
        return cls(sorted(words))

    def encode(self, tokens: Sequence[str], number_positions: Sequence[int]) -> List[int]:
        positions = set(number_positions)
        ids = []
        for i, token in enumerate(tokens):
            if i in positions:
                ids.append(self.stoi[self.NUM])
            elif token in self.stoi:
                ids.append(self.stoi[token])
            else:
                raise UnknownTokenError(token)
        return ids


class CandidateLayout:
    """Índices de candidato: operadores, N_b, constantes y números del problema"""

    def __init__(self, constants: Sequence[Fraction]):
        self.constants = [Fraction(c) for c in constants]
        self.number_offset = CONSTANT_OFFSET + len(self.constants)

    def leaf_candidate(self, quantity: Quantity) -> int:
        if quantity.origin == QuantityOrigin.NUMBER:
            return self.number_offset + quantity.index
        if quantity.value in self.constants:
            return CONSTANT_OFFSET + self.constants.index(quantity.value)
        raise DatasetSchemaError(f"La hoja {quantity.value} no es un número ni una constante")

    def quantity(self, candidate: int, numbers: Sequence[Fraction]) -> Quantity:
        if candidate >= self.number_offset:
            index = candidate - self.number_offset
            return Quantity(Fraction(numbers[index]), QuantityOrigin.NUMBER, index)
        return Quantity(self.constants[candidate - CONSTANT_OFFSET], QuantityOrigin.CONSTANT)


@dataclass
class SlotTarget:
    candidate: int
    form: Optional[int] = None
    child: Optional[MTree] = None


def align_targets(children: Sequence[MTree], layout: CandidateLayout, max_len: int = 8) -> List[SlotTarget]:
    """Pseudo-orden: operadores, después constantes, después números del problema, y N_b."""
    keyed = []
    for child in children:
        if isinstance(child, MNode):
            rank = OPERATORS.index(child.op)
            keyed.append(((0, rank, mtree_key(child)), SlotTarget(rank, None, child)))
        else:
            candidate = layout.leaf_candidate(child.quantity)
            form = None if child.form is None else LEAF_FORMS.index(child.form)
            keyed.append(((1, candidate, -1 if form is None else form), SlotTarget(candidate, form, child)))
    if len(keyed) > max_len:
        raise DatasetSchemaError(f"Un nodo con {len(keyed)} hijos supera el límite de {max_len}")
    keyed.sort(key=lambda item: item[0])
    targets = [target for _, target in keyed]
    if len(targets) < max_len:
        targets.append(SlotTarget(NB_INDEX))
    return targets


# ----------------------------------------------------------------------
# Piezas numéricas
# ----------------------------------------------------------------------

def positional_encoding(length: int, d_k: int) -> torch.Tensor:
    """p[i,2j] = sin(i/10000^(2j/d_k)), p[i,2j+1] = cos(i/10000^(2j/d_k))."""
    if d_k % 2:
        raise ConfigError(f"d_k debe ser par (recibido {d_k})")
    position = torch.arange(length, dtype=torch.float64).unsqueeze(1)
    rate = torch.pow(10000.0, torch.arange(0, d_k, 2, dtype=torch.float64) / d_k)
    table = torch.zeros(length, d_k, dtype=torch.float64)
    table[:, 0::2] = torch.sin(position / rate)
    table[:, 1::2] = torch.cos(position / rate)
    return table.to(torch.get_default_dtype())


def focal_loss(logits: torch.Tensor, targets: torch.Tensor, gamma: float = 2.0, reduction: str = "sum") -> torch.Tensor:
    """FL(p_t) = -(1 - p_t)^γ · log(p_t); con γ=0 es la entropía cruzada."""
    ce_loss = F.cross_entropy(logits, targets, reduction="none")
    pt = torch.exp(-ce_loss)
    loss = (1 - pt) ** gamma * ce_loss
    if reduction == "sum":
        return loss.sum()
    if reduction == "mean":
        return loss.mean()
    return loss


def candidate_distribution(scores: torch.Tensor, valid: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Ptr_i = softmax(ω_i) sobre los candidatos válidos."""
    if valid is not None:
        scores = scores.masked_fill(~valid, float("-inf"))
    return torch.softmax(scores, dim=-1)


class MultiHeadAttention(nn.Module):
    """Atención multi-cabeza con máscara booleana (True = bloqueado)"""

    def __init__(self, d_model: int, heads: int):
        super().__init__()
        self.heads = heads
        self.d_head = d_model // heads
        self.w_q = nn.Linear(d_model, d_model)
        self.w_k = nn.Linear(d_model, d_model)
        self.w_v = nn.Linear(d_model, d_model)
        self.w_o = nn.Linear(d_model, d_model)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        batch, length, _ = x.shape
        return x.view(batch, length, self.heads, self.d_head).transpose(1, 2)

    def forward(self, query, key, value, blocked: Optional[torch.Tensor] = None) -> torch.Tensor:
        q, k, v = self._split(self.w_q(query)), self._split(self.w_k(key)), self._split(self.w_v(value))
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d_head)
        if blocked is not None:
            scores = scores.masked_fill(blocked, float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        out = (weights @ v).transpose(1, 2).reshape(query.shape[0], query.shape[1], -1)
        return self.w_o(out)


@dataclass
class EncoderOutput:
    problem_vectors: torch.Tensor   # E_s, (B, d)
    number_vectors: torch.Tensor    # E_V rellenado, (B, M, d)
    number_mask: torch.Tensor       # (B, M), True = número real
    numbers: List[List[Fraction]]


class ProblemEncoder(nn.Module):
    """Embeddings + codificación posicional + una capa de autoatención; [CLS] da E_s."""

    def __init__(self, vocab_size: int, d_k: int, heads: int):
        super().__init__()
        self.embedding = nn.Embedding(vocab_size, d_k, padding_idx=0)
        self.attention = MultiHeadAttention(d_k, heads)
        self.norm = nn.LayerNorm(d_k)
        self.d_k = d_k

    def forward(self, token_ids: torch.Tensor, padding: torch.Tensor) -> torch.Tensor:
        x = self.embedding(token_ids) + positional_encoding(token_ids.shape[1], self.d_k).to(self.embedding.weight)
        blocked = padding[:, None, None, :]
        return self.norm(x + self.attention(x, x, x, blocked))


# ----------------------------------------------------------------------
# Nivel de descomposición
# ----------------------------------------------------------------------

@dataclass
class LevelBatch:
    """Objetivos de un mismo nivel; los grupos separan problemas distintos."""
    goal_vectors: torch.Tensor               # (G, d)
    groups: List[int]
    terminators: List[int]                   # posición de N_b (max_len-1 si no se conoce)
    dummy_vectors: Optional[torch.Tensor] = None
    dummy_groups: List[int] = field(default_factory=list)


@dataclass
class LevelOutput:
    slots: torch.Tensor        # Ê_p, (G, L, d)
    scores: torch.Tensor       # ω enmascarado, (G, L, K)
    type_logits: torch.Tensor  # (G, L, 4)


def build_slot_mask(
    groups: Sequence[int],
    terminators: Sequence[int],
    dummy_groups: Sequence[int],
    cross_goal: bool,
    max_len: int = 8,
) -> torch.Tensor:
    """Máscara (T, T) de la atención entre ranuras; True bloquea. T = G·L + dummies."""
    goals = len(groups)
    goal_of = torch.arange(goals).repeat_interleave(max_len)
    pos = torch.arange(max_len).repeat(goals)
    group_of = torch.tensor(list(groups), dtype=torch.long).repeat_interleave(max_len)
    term_of = torch.tensor(list(terminators), dtype=torch.long).repeat_interleave(max_len)

    causal = pos[None, :] <= pos[:, None]
    own = goal_of[:, None] == goal_of[None, :]
    allowed = own & causal
    if cross_goal:
        sibling = (group_of[:, None] == group_of[None, :]) & ~own
        allowed = allowed | (sibling & causal & (pos[None, :] <= term_of[None, :]))

    dummies = len(dummy_groups)
    if not dummies:
        return ~allowed
    size = goals * max_len + dummies
    full = torch.zeros(size, size, dtype=torch.bool)
    full[: goals * max_len, : goals * max_len] = allowed
    if cross_goal:
        dummy_group = torch.tensor(list(dummy_groups), dtype=torch.long)
        full[: goals * max_len, goals * max_len:] = group_of[:, None] == dummy_group[None, :]
    full[goals * max_len:, goals * max_len:] = torch.eye(dummies, dtype=torch.bool)
    return ~full


class NagdModel(nn.Module):
    """Codificador + descomponedor de objetivos + puntero + clasificador de formas"""

    def __init__(self, config: NagdConfig, vocabulary: Vocabulary):
        super().__init__()
        self.config = config
        self.vocabulary = vocabulary
        self.layout = CandidateLayout(config.constant_values)
        d = config.d_k
        self.encoder = ProblemEncoder(len(vocabulary), d, config.heads)
        self.op_embedding = nn.Parameter(torch.randn(len(OPERATORS), d) * 0.1)
        self.nb_embedding = nn.Parameter(torch.randn(1, d) * 0.1)
        self.constant_embedding = nn.Parameter(torch.randn(len(self.layout.constants), d) * 0.1)
        # W̃_Q, W̃_K, W̃_V
        self.slot_attention = MultiHeadAttention(d, config.heads)
        self.slot_norm = nn.LayerNorm(d)
        # Ŵ_K, Ŵ_V
        self.inter_key = nn.Linear(d, d, bias=False)
        self.inter_value = nn.Linear(d, d, bias=False)
        self.inter_norm = nn.LayerNorm(d)
        # ω_ij = uᵀ tanh(W_p e_i + W_b c_j)
        self.pointer_slot = nn.Linear(d, d, bias=False)
        self.pointer_candidate = nn.Linear(d, d)
        self.pointer_u = nn.Parameter(torch.randn(d) / math.sqrt(d))
        self.type_mlp = nn.Sequential(nn.Linear(d, d), nn.Tanh(), nn.Linear(d, len(LEAF_FORMS)))
        self.register_buffer("slot_pe", positional_encoding(config.max_len, d), persistent=False)

    # --- codificación ---

    def encode(self, problems: Sequence[ProblemLike]) -> EncoderOutput:
        rows = [self.vocabulary.encode(p.tokens, p.number_positions) for p in problems]
        if any(not row for row in rows):
            raise DatasetSchemaError("Problema sin tokens")
        length = 1 + max(len(row) for row in rows)
        cls_id = self.vocabulary.stoi[Vocabulary.CLS]
        ids = torch.zeros(len(rows), length, dtype=torch.long)
        for b, row in enumerate(rows):
            ids[b, 0] = cls_id
            ids[b, 1: 1 + len(row)] = torch.tensor(row, dtype=torch.long)
        padding = ids == 0
        hidden = self.encoder(ids, padding)

        most = max([len(p.number_positions) for p in problems] + [1])
        number_vectors = hidden.new_zeros(len(rows), most, self.config.d_k)
        number_mask = torch.zeros(len(rows), most, dtype=torch.bool)
        for b, problem in enumerate(problems):
            if problem.number_positions:
                index = torch.tensor([1 + p for p in problem.number_positions], dtype=torch.long)
                number_vectors[b, : len(index)] = hidden[b, index]
                number_mask[b, : len(index)] = True
        return EncoderOutput(hidden[:, 0], number_vectors, number_mask, [list(p.numbers) for p in problems])

    def candidate_bank(self, enc: EncoderOutput) -> Tuple[torch.Tensor, torch.Tensor]:
        batch = enc.problem_vectors.shape[0]
        shared = torch.cat([self.op_embedding, self.nb_embedding, self.constant_embedding], dim=0)
        bank = torch.cat([shared.unsqueeze(0).expand(batch, -1, -1), enc.number_vectors], dim=1)
        valid = torch.cat([torch.ones(batch, shared.shape[0], dtype=torch.bool), enc.number_mask], dim=1)
        return bank, valid

    # --- descomposición ---

    def decompose_level(
        self,
        level: LevelBatch,
        bank: torch.Tensor,
        bank_valid: torch.Tensor,
        cross_goal: Optional[bool] = None,
        slot_offsets: Optional[torch.Tensor] = None,
    ) -> LevelOutput:
        cross = self.config.cross_goal if cross_goal is None else cross_goal
        length = self.config.max_len
        goals = level.goal_vectors.shape[0]
        slots = level.goal_vectors[:, None, :] + self.slot_pe[None]
        if slot_offsets is not None:
            slots = slots + slot_offsets
        sequence = slots.reshape(1, goals * length, -1)
        dummy_groups = level.dummy_groups if cross else []
        if dummy_groups:
            sequence = torch.cat([sequence, level.dummy_vectors.unsqueeze(0)], dim=1)
        blocked = build_slot_mask(level.groups, level.terminators, dummy_groups, cross, length)
        attended = self.slot_norm(sequence + self.slot_attention(sequence, sequence, sequence, blocked))
        attended = attended[0, : goals * length].reshape(goals, length, -1)

        group_index = torch.tensor(level.groups, dtype=torch.long)
        goal_bank, goal_valid = bank[group_index], bank_valid[group_index]
        keys, values = self.inter_key(goal_bank), self.inter_value(goal_bank)
        scores = attended @ keys.transpose(1, 2) / math.sqrt(self.config.d_k)
        scores = scores.masked_fill(~goal_valid[:, None, :], float("-inf"))
        slots_hat = self.inter_norm(attended + torch.softmax(scores, dim=-1) @ values)

        return LevelOutput(
            slots=slots_hat,
            scores=self.pointer_scores(slots_hat, goal_bank, goal_valid),
            type_logits=self.type_classify(slots_hat),
        )

    def pointer_scores(self, slots: torch.Tensor, bank: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
        hidden = torch.tanh(self.pointer_slot(slots)[:, :, None, :] + self.pointer_candidate(bank)[:, None, :, :])
        scores = hidden @ self.pointer_u
        return scores.masked_fill(~valid[:, None, :], float("-inf"))

    def pointer_select(self, slots: torch.Tensor, bank: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.pointer_scores(slots, bank, valid), dim=-1)

    def type_classify(self, slots: torch.Tensor) -> torch.Tensor:
        return self.type_mlp(slots)

    def dummy_vector(self, slot: torch.Tensor) -> torch.Tensor:
        return slot + self.slot_pe[0]


# ----------------------------------------------------------------------
# Pérdida con teacher forcing
# ----------------------------------------------------------------------

@dataclass
class LossParts:
    total: torch.Tensor
    pointer: torch.Tensor
    type: torch.Tensor
    slots: int


@dataclass
class _Goal:
    vector: torch.Tensor
    group: int
    targets: List[SlotTarget]


def slot_loss(model: NagdModel, output: LevelOutput, goals: Sequence[_Goal]) -> Tuple[torch.Tensor, torch.Tensor, int]:
    """Entropía cruzada del puntero en las ranuras hasta N_b y focal loss en las hojas."""
    rows, cols, candidates = [], [], []
    leaf_rows, leaf_cols, forms = [], [], []
    for g, goal in enumerate(goals):
        for i, target in enumerate(goal.targets):
            rows.append(g)
            cols.append(i)
            candidates.append(target.candidate)
            if target.form is not None:
                leaf_rows.append(g)
                leaf_cols.append(i)
                forms.append(target.form)
    pointer = F.cross_entropy(
        output.scores[rows, cols], torch.tensor(candidates, dtype=torch.long), reduction="sum"
    )
    if forms:
        type_loss = focal_loss(
            output.type_logits[leaf_rows, leaf_cols],
            torch.tensor(forms, dtype=torch.long),
            model.config.focal_gamma,
        )
    else:
        type_loss = output.type_logits.sum() * 0
    return pointer, type_loss, len(rows)


def teacher_forced_loss(model: NagdModel, problems: Sequence[ProblemLike]) -> LossParts:
    """Descompone cada objetivo de oro, nivel a nivel, y suma las pérdidas de todas las ranuras."""
    enc = model.encode(problems)
    bank, valid = model.candidate_bank(enc)
    length = model.config.max_len
    goals = [
        _Goal(enc.problem_vectors[b], b, align_targets([p.tree], model.layout, length))
        for b, p in enumerate(problems)
    ]
    dummy_vectors: List[torch.Tensor] = []
    dummy_groups: List[int] = []
    pointer_total = enc.problem_vectors.sum() * 0
    type_total = enc.problem_vectors.sum() * 0
    slot_count = 0
    while goals:
        level = LevelBatch(
            goal_vectors=torch.stack([g.vector for g in goals]),
            groups=[g.group for g in goals],
            terminators=[len(g.targets) - 1 for g in goals],
            dummy_vectors=torch.stack(dummy_vectors) if dummy_vectors else None,
            dummy_groups=dummy_groups,
        )
        output = model.decompose_level(level, bank, valid)
        pointer, type_loss, count = slot_loss(model, output, goals)
        pointer_total = pointer_total + pointer
        type_total = type_total + type_loss
        slot_count += count

        next_goals, dummy_vectors, dummy_groups = [], [], []
        for g, goal in enumerate(goals):
            for i, target in enumerate(goal.targets):
                if isinstance(target.child, MNode):
                    next_goals.append(
                        _Goal(output.slots[g, i], goal.group, align_targets(target.child.children, model.layout, length))
                    )
                elif target.child is not None:
                    dummy_vectors.append(model.dummy_vector(output.slots[g, i]))
                    dummy_groups.append(goal.group)
        goals = next_goals

    batch = len(problems)
    total = (pointer_total + model.config.type_loss_weight * type_total) / batch
    return LossParts(total, pointer_total / batch, type_total / batch, slot_count)


# ----------------------------------------------------------------------
# Decodificación
# ----------------------------------------------------------------------

@dataclass
class DecodeResult:
    tree: Optional[MTree] = None
    failure: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.tree is not None


@dataclass
class _OpenGoal:
    vector: torch.Tensor
    group: int
    depth: int
    op: Optional[MOp] = None  # None en la raíz virtual
    children: List[Union[MLeaf, "_OpenGoal"]] = field(default_factory=list)


def _read_slots(
    model: NagdModel, level: LevelBatch, bank: torch.Tensor, valid: torch.Tensor
) -> Tuple[torch.Tensor, torch.Tensor, List[List[int]]]:
    """Elecciones por ranura hasta N_b; con atención entre objetivos, posición a posición."""
    length = model.config.max_len
    goals = len(level.groups)
    if not model.config.cross_goal:
        output = model.decompose_level(level, bank, valid)
        choices = output.scores.argmax(dim=-1).tolist()
        return output.slots, output.type_logits, [_until_terminator(row) for row in choices]

    terminators = [length - 1] * goals
    slots = level.goal_vectors.new_zeros(goals, length, model.config.d_k)
    type_logits = level.goal_vectors.new_zeros(goals, length, len(LEAF_FORMS))
    chosen: List[List[int]] = [[] for _ in range(goals)]
    active = set(range(goals))
    for i in range(length):
        level.terminators = list(terminators)
        output = model.decompose_level(level, bank, valid)
        for g in sorted(active):
            slots[g, i] = output.slots[g, i]
            type_logits[g, i] = output.type_logits[g, i]
            choice = int(output.scores[g, i].argmax())
            chosen[g].append(choice)
            if choice == NB_INDEX:
                terminators[g] = i
                active.discard(g)
        if not active:
            break
    return slots, type_logits, [_until_terminator(row) for row in chosen]


def _until_terminator(choices: Sequence[int]) -> List[int]:
    picked = []
    for choice in choices:
        if choice == NB_INDEX:
            break
        picked.append(choice)
    return picked


def _assemble(goal: _OpenGoal, ref: bool) -> MTree:
    children = [c if isinstance(c, MLeaf) else _assemble(c, ref) for c in goal.children]
    if len(children) == 1:
        only = children[0]
        if ref:
            legal = goal.op in (MOp.NEG_MUL, MOp.REC_ADD)
        else:
            legal = goal.op == MOp.NEG_MUL and isinstance(only, MNode) and only.op == MOp.REC_ADD
        if not legal:
            raise DecodeError(f"Nodo {goal.op.value} con un solo hijo")
    return make_node(goal.op, children)


def decode_batch(model: NagdModel, problems: Sequence[ProblemLike]) -> List[DecodeResult]:
    """Decodificación por argmax, nivel a nivel; cada problema falla o produce un MTree válido."""
    ref = model.config.refmtree
    length = model.config.max_len
    with torch.no_grad():
        enc = model.encode(problems)
        bank, valid = model.candidate_bank(enc)
        roots = [_OpenGoal(enc.problem_vectors[b], b, 0) for b in range(len(problems))]
        failures: Dict[int, str] = {}
        goals: List[_OpenGoal] = list(roots)
        dummy_vectors: List[torch.Tensor] = []
        dummy_groups: List[int] = []
        while goals:
            level = LevelBatch(
                goal_vectors=torch.stack([g.vector for g in goals]),
                groups=[g.group for g in goals],
                terminators=[length - 1] * len(goals),
                dummy_vectors=torch.stack(dummy_vectors) if dummy_vectors else None,
                dummy_groups=dummy_groups,
            )
            slots, type_logits, choices = _read_slots(model, level, bank, valid)
            next_goals, dummy_vectors, dummy_groups = [], [], []
            for g, goal in enumerate(goals):
                if goal.group in failures:
                    continue
                if not choices[g]:
                    failures[goal.group] = "la primera ranura es N_b"
                    continue
                if goal.op is None and len(choices[g]) != 1:
                    failures[goal.group] = f"la raíz virtual tiene {len(choices[g])} hijos"
                    continue
                for i, choice in enumerate(choices[g]):
                    if choice < len(OPERATORS):
                        if goal.depth + 1 > model.config.depth_cap:
                            failures[goal.group] = f"profundidad mayor que {model.config.depth_cap}"
                            break
                        child = _OpenGoal(slots[g, i], goal.group, goal.depth + 1, OPERATORS[choice])
                        goal.children.append(child)
                        next_goals.append(child)
                        continue
                    quantity = model.layout.quantity(choice, enc.numbers[goal.group])
                    form = None if ref else LEAF_FORMS[int(type_logits[g, i].argmax())]
                    goal.children.append(MLeaf(quantity, form))
                    dummy_vectors.append(model.dummy_vector(slots[g, i]))
                    dummy_groups.append(goal.group)
            goals = [g for g in next_goals if g.group not in failures]
            kept = [k for k, group in enumerate(dummy_groups) if group not in failures]
            dummy_vectors = [dummy_vectors[k] for k in kept]
            dummy_groups = [dummy_groups[k] for k in kept]

    results = []
    for b, root in enumerate(roots):
        if b in failures:
            results.append(DecodeResult(failure=failures[b]))
            continue
        try:
            only = root.children[0]
            tree = only if isinstance(only, MLeaf) else _assemble(only, ref)
            validate_mtree(tree, ref)
            eval_mtree(tree)
        except (DecodeError, MalformedTreeError, ReciprocalOfZeroError) as e:
            results.append(DecodeResult(failure=str(e)))
            continue
        results.append(DecodeResult(tree=tree))
    return results


def decode_tree(model: NagdModel, problem: ProblemLike) -> MTree:
    """Decodifica un problema; lanza DecodeError si la salida no es un MTree válido."""
    result = decode_batch(model, [problem])[0]
    if not result.ok:
        raise DecodeError(result.failure)
    return result.tree
