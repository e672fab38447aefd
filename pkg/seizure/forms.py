from django import forms
from django.core.exceptions import ValidationError

from .networks import ModelKind
from .training import STRATA


class IntegerListField(forms.Field):
    """A JSON list of positive integers."""

    def to_python(self, value):
        if value in self.empty_values:
            return None
        if not isinstance(value, (list, tuple)) or not value:
            raise ValidationError('Expected a nonempty list of integers.', code='invalid')
        out = []
        for index, item in enumerate(value):
            if isinstance(item, bool) or not isinstance(item, int) or item < 1:
                raise ValidationError(
                    f'Item {index} must be a positive integer, got {item!r}.',
                    code='invalid', params={'index': index},
                )
            out.append(item)
        return out


class BandListField(forms.Field):
    """A JSON list of {center, bandwidth, amplitude} objects, one per class."""
    keys = {'center', 'bandwidth', 'amplitude'}

    def to_python(self, value):
        if value in self.empty_values:
            return None
        if not isinstance(value, list):
            raise ValidationError('Expected a list of band objects.', code='invalid')
        bands = []
        for index, band in enumerate(value):
            if not isinstance(band, dict) or 'center' not in band or set(band) - self.keys:
                raise ValidationError(
                    f'Band {index} must be an object with center and optional bandwidth, amplitude.',
                    code='invalid', params={'index': index},
                )
            try:
                parsed = {key: float(band[key]) for key in band}
            except (TypeError, ValueError):
                raise ValidationError(f'Band {index} has a non-numeric value.', code='invalid',
                                      params={'index': index})
            if parsed['center'] <= 0 or parsed.get('bandwidth', 0) < 0 or parsed.get('amplitude', 1) <= 0:
                raise ValidationError(f'Band {index} needs center > 0, bandwidth >= 0, amplitude > 0.',
                                      code='invalid', params={'index': index})
            bands.append(parsed)
        return bands


class StftConfigForm(forms.Form):
    fft_size = forms.IntegerField(min_value=8, required=False)
    overlap = forms.FloatField(min_value=0.0, max_value=0.99, required=False)
    window = forms.ChoiceField(choices=[(w, w) for w in ('hann', 'hamming', 'blackman', 'boxcar')],
                               required=False)
    log_floor = forms.FloatField(required=False)
    target_rate = forms.IntegerField(min_value=1, required=False)
    frames = forms.IntegerField(min_value=1, required=False)
    freq_bins_kept = forms.IntegerField(min_value=1, required=False)

    def clean_log_floor(self):
        floor = self.cleaned_data.get('log_floor')
        if floor is not None and floor <= 0:
            raise ValidationError('log_floor must be positive.')
        return floor


class TrainConfigForm(forms.Form):
    learning_rate = forms.FloatField(required=False)
    fine_tune_rate = forms.FloatField(required=False)
    batch_size = forms.IntegerField(min_value=1, required=False)
    max_epochs_base = forms.IntegerField(min_value=1, required=False)
    max_epochs_head = forms.IntegerField(min_value=1, required=False)
    max_epochs_finetune = forms.IntegerField(min_value=1, required=False)
    patience = forms.IntegerField(min_value=1, required=False)
    k = forms.IntegerField(min_value=2, required=False)
    repeats = forms.IntegerField(min_value=1, required=False)

    def _positive(self, name):
        value = self.cleaned_data.get(name)
        if value is not None and value <= 0:
            raise ValidationError(f'{name} must be positive.')
        return value

    def clean_learning_rate(self):
        return self._positive('learning_rate')

    def clean_fine_tune_rate(self):
        return self._positive('fine_tune_rate')


class SynthConfigForm(forms.Form):
    classes = forms.IntegerField(min_value=2, required=False)
    bands = BandListField(required=False)
    noise = forms.FloatField(min_value=0.0, required=False)
    events_per_class = forms.IntegerField(min_value=1, required=False)
    event_duration = forms.FloatField(min_value=1.0, required=False)
    sample_rate = forms.FloatField(min_value=1.0, required=False)
    patients = forms.IntegerField(min_value=1, required=False)
    sinusoids = forms.IntegerField(min_value=1, required=False)


class ModelConfigForm(forms.Form):
    cnn_filters = IntegerListField(required=False)
    lstm_hidden = IntegerListField(required=False)
    kernel_size = forms.IntegerField(min_value=1, required=False)

    def clean_kernel_size(self):
        size = self.cleaned_data.get('kernel_size')
        if size is not None and size % 2 == 0:
            raise ValidationError('kernel_size must be odd.')
        return size


class RunConfigForm(forms.Form):
    kind = forms.ChoiceField(choices=ModelKind.choices, required=False)
    schema = forms.RegexField(regex=r'^(tuh8|epi4|synth\d+)$', required=False)
    strata = forms.ChoiceField(choices=[(s, s) for s in STRATA], required=False)
    seed = forms.IntegerField(min_value=0, required=False)
    out = forms.CharField(required=False)
