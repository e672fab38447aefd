"""
Report helpers: corpus summaries, result documents and CSV exports.

Result documents are sorted-key JSON without timestamps so identical runs
produce identical bytes; run metadata goes to a separate file.
"""
import json
import logging
from pathlib import Path

import pandas as pd
from django.utils import timezone

logger = logging.getLogger(__name__)


class ReportService:
    """Builds and writes the tables and documents the commands emit."""

    @staticmethod
    def manifest_summary(manifest):
        """Events and minutes per class of a corpus manifest."""
        schema = manifest.schema
        events = [0] * len(schema)
        seconds = [0.0] * len(schema)
        for entry in manifest.entries:
            for ann in entry.annotations:
                events[ann.label] += 1
                seconds[ann.label] += ann.end - ann.start
        return pd.DataFrame({
            'class': list(schema.classes),
            'code': [schema.code(c) for c in range(len(schema))],
            'events': events,
            'minutes': [round(s / 60.0, 2) for s in seconds],
        })

    @staticmethod
    def dataset_summary(dataset):
        """Events, 1 s windows and minutes per class of a preprocessed dataset."""
        frame = pd.DataFrame({'label': dataset.labels, 'event_id': dataset.event_ids})
        grouped = frame.groupby('label')
        schema = dataset.schema
        windows = grouped.size().reindex(range(len(schema)), fill_value=0)
        events = grouped['event_id'].nunique().reindex(range(len(schema)), fill_value=0)
        return pd.DataFrame({
            'class': list(schema.classes),
            'code': [schema.code(c) for c in range(len(schema))],
            'events': events.astype(int).tolist(),
            'windows': windows.astype(int).tolist(),
            'minutes': [round(w / 60.0, 2) for w in windows.tolist()],
        })

    @staticmethod
    def format_table(frame) -> str:
        return frame.to_string(index=False)

    @staticmethod
    def summary_row(dataset_name: str, kind_label: str, mean_f1: float, std_f1: float = None):
        """One row in the dataset / preprocessing / model / F1 layout."""
        f1 = f'{mean_f1:.3f}' if std_f1 is None else f'{mean_f1:.3f} +/- {std_f1:.3f}'
        return pd.DataFrame([{
            'dataset': dataset_name,
            'preprocessing': 'STFT',
            'model': kind_label,
            'F1': f1,
        }])

    @staticmethod
    def write_json(path, document: dict) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(document, indent=2, sort_keys=True) + '\n')
        return path

    @staticmethod
    def write_metadata(path, **fields) -> Path:
        return ReportService.write_json(path, {'timestamp': timezone.now().isoformat(), **fields})

    @staticmethod
    def write_confusion_csv(path, counts, classes) -> Path:
        frame = pd.DataFrame(counts, index=list(classes), columns=list(classes))
        frame.index.name = 'true\\predicted'
        frame.to_csv(path, lineterminator='\n')
        return Path(path)

    @staticmethod
    def write_class_accuracy_csv(path, accuracy, classes) -> Path:
        pd.DataFrame({'class': list(classes), 'accuracy': list(accuracy)}).to_csv(
            path, index=False, lineterminator='\n'
        )
        return Path(path)
