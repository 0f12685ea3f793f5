"""rolledit: two-stage symbolic music generation and editing.

Stage 1 samples and edits binary onsetrolls with a VP-SDE diffusion model
under note-density / pitch-distribution / chord-progression conditioning;
stage 2 refines an onsetroll into a full MIDI-event sequence with an
autoregressive decoder. The package also ships a CLI (``rolledit``) and an
HTTP job service for interactive use.
"""

from __future__ import annotations

from .checkpoint import Checkpoint, CorruptCheckpoint
from .corpus import (
    CorpusError,
    EmptyCorpus,
    NoFilesFound,
    Segment,
    audit_segment,
    ingest,
    load_segments,
    make_toy_corpus,
    save_segments,
)
from .denoiser import (
    Denoiser,
    DenoiserConfig,
    EmbedMode,
    EpsScoreFunction,
    as_score_function,
    embed_conditions,
    train as train_stage1,
)
from .editor import (
    EditError,
    EditRequest,
    EditTask,
    Region,
    RequestSchemaError,
    combine,
    generate,
    inpaint,
    outpaint,
    plan_edit,
    request_from_json,
    request_from_obj,
    request_to_obj,
    run_edit,
    stroke_edit,
    stroke_generate,
    style_transfer,
)
from .metrics import (
    MetricReport,
    csd,
    dd_similarity,
    overlap_ratio,
    pd_similarity,
)
from .midi_io import (
    MidiError,
    Note,
    Score,
    parse_smf,
    quantize,
    score_from_notes,
    write_smf,
)
from .refiner import (
    MalformedOutput,
    Refiner,
    RefinerConfig,
    generate_events,
    refine,
    teacher_forced_accuracy,
    train_refiner,
)
from .roll import (
    DurationRule,
    MidiEventSequence,
    RollError,
    detokenize,
    onsetroll_to_score,
    roll_from_bytes,
    roll_from_json,
    roll_to_bytes,
    roll_to_json,
    score_to_onsetroll,
    score_to_pianoroll,
    segment_windows,
    tokenize,
    validate_roll,
)
from .sde import (
    BetaSchedule,
    DEFAULT_SCHEDULE,
    ScoreFunction,
    SdeError,
    alpha_bar,
    alpha_bar_path,
    beta_at,
    binarize,
    masked_edit,
    perturb,
    reverse_step,
    sample,
    signed_from_roll,
)
from .signals import (
    CHORD_QUALITIES,
    CHORD_TEMPLATES,
    ControlSignals,
    NO_CHORD,
    NUM_CHORDS,
    SignalError,
    chord_index,
    chord_name,
    chord_progression,
    extract_signals,
    note_density,
    null_signals,
    pitch_distribution,
    signals_from_json,
    signals_to_json,
)

__version__ = "0.1.0"

train_stage2 = train_refiner
