# Services package
from .expr_parser import parse, eval_exact, print_expr
from .canonicalizer import canonicalize, canonical_key, render_canonical
from .mtree_service import build_mtree, to_refmtree, eval_mtree, mtree_equal, paths, branch_number, render_mtree
from .metrics_system import score_sample, score_corpus, aggregate, mtree_iou
from .corpus_service import load_dataset, generate_synthetic, corpus_statistics
from .error_tracking_system import ErrorTracker, error_tracker
from .training_analytics import TrainingAnalytics
from .nagd_model import NagdModel, Vocabulary, teacher_forced_loss, decode_batch
from .nagd_trainer import NagdTrainer, load_train_config, run_training

__all__ = [
    'parse',
    'eval_exact',
    'print_expr',
    'canonicalize',
    'canonical_key',
    'render_canonical',
    'build_mtree',
    'to_refmtree',
    'eval_mtree',
    'mtree_equal',
    'paths',
    'branch_number',
    'render_mtree',
    'score_sample',
    'score_corpus',
    'aggregate',
    'mtree_iou',
    'load_dataset',
    'generate_synthetic',
    'corpus_statistics',
    'ErrorTracker',
    'error_tracker',
    'TrainingAnalytics',
    'NagdModel',
    'Vocabulary',
    'teacher_forced_loss',
    'decode_batch',
    'NagdTrainer',
    'load_train_config',
    'run_training',
]
