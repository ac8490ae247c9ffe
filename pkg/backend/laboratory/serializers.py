from rest_framework import serializers

from .ensembles import ATOM_KINDS, BUILTIN_NAMES, SYMMETRIES, TRUNCATION_POLICIES, EnsembleSpec
from .exceptions import LabError
from .harness import G_KINDS, STATISTICS, ExperimentConfig, GSpec


class AtomSerializer(serializers.Serializer):
    """Validation of an atom distribution document."""
    kind = serializers.ChoiceField(choices=ATOM_KINDS)
    variance = serializers.FloatField(required=False, min_value=0)
    var_re = serializers.FloatField(required=False, min_value=0)
    var_im = serializers.FloatField(required=False, min_value=0)
    cov = serializers.FloatField(required=False, default=0.0)
    points = serializers.ListField(child=serializers.ListField(min_length=2, max_length=2), required=False)
    base = serializers.DictField(required=False)
    scale = serializers.FloatField(required=False)
    complex_sum = serializers.BooleanField(required=False, default=True)

    def validate(self, attrs):
        kind = attrs['kind']
        needed = {
            'real_gaussian': ('variance',),
            'complex_gaussian': ('var_re', 'var_im'),
            'discrete_real': ('points',),
            'discrete_complex': ('points',),
            'scaled_sum': ('base', 'scale'),
        }[kind]
        missing = [name for name in needed if name not in attrs]
        if missing:
            raise serializers.ValidationError(f'{kind} atoms need: {", ".join(missing)}.')
        if kind == 'scaled_sum':
            nested = AtomSerializer(data=attrs['base'])
            nested.is_valid(raise_exception=True)
        return attrs


class TruncationSerializer(serializers.Serializer):
    policy = serializers.ChoiceField(choices=TRUNCATION_POLICIES, default='resample')
    K = serializers.FloatField(required=False, allow_null=True, min_value=0)
    factor = serializers.FloatField(required=False, min_value=0)


class EnsembleSpecSerializer(serializers.Serializer):
    """A full ensemble document {symmetry, offdiag_atom, diag_atom, c, truncation}."""
    symmetry = serializers.ChoiceField(choices=SYMMETRIES)
    offdiag_atom = AtomSerializer()
    diag_atom = AtomSerializer()
    c = serializers.FloatField(min_value=0)
    truncation = TruncationSerializer(required=False)
    name = serializers.CharField(required=False, max_length=100)

    def validate(self, attrs):
        try:
            return EnsembleSpec.from_dict(self.initial_data)
        except LabError as exc:
            raise serializers.ValidationError(exc.message)


class EnsembleField(serializers.Field):
    """Builtin ensemble name or full ensemble document."""

    def to_internal_value(self, data):
        if isinstance(data, str):
            if data.lower() not in BUILTIN_NAMES:
                raise serializers.ValidationError(
                    f'Unknown ensemble. Must be one of: {", ".join(BUILTIN_NAMES)}'
                )
            return EnsembleSpec.from_dict(data)
        if isinstance(data, dict) and 'builtin' in data:
            try:
                return EnsembleSpec.from_dict(data)
            except LabError as exc:
                raise serializers.ValidationError(exc.message)
        serializer = EnsembleSpecSerializer(data=data)
        serializer.is_valid(raise_exception=True)
        return serializer.validated_data

    def to_representation(self, value):
        return value.to_dict()


class GSpecSerializer(serializers.Serializer):
    kind = serializers.ChoiceField(choices=G_KINDS)
    component = serializers.IntegerField(required=False, default=1, min_value=1)
    scale = serializers.FloatField(required=False, default=1.0)
    center = serializers.FloatField(required=False, default=0.0)
    width = serializers.FloatField(required=False, default=1.0, min_value=0)
    edge = serializers.BooleanField(required=False, default=False)

    def validate(self, attrs):
        try:
            GSpec.from_dict(dict(attrs))
        except LabError as exc:
            raise serializers.ValidationError(exc.message)
        return attrs


class StatisticSerializer(serializers.Serializer):
    """{"kind": <statistic>, ...parameters}; parameters are checked by the config itself."""
    kind = serializers.ChoiceField(choices=STATISTICS)

    def to_internal_value(self, data):
        if isinstance(data, str):
            data = {'kind': data}
        if not isinstance(data, dict):
            raise serializers.ValidationError('Statistic must be a name or an object with a "kind".')
        validated = super().to_internal_value(data)
        params = {key: value for key, value in data.items() if key != 'kind'}
        if 'g' in params:
            g = GSpecSerializer(data=params['g'])
            g.is_valid(raise_exception=True)
            params['g'] = dict(g.validated_data)
        return dict(params, kind=validated['kind'])


class ExperimentConfigSerializer(serializers.Serializer):
    """Validation of an experiment config document."""
    name = serializers.CharField(required=False, max_length=200)
    ensemble = EnsembleField(required=False)
    ensembles = serializers.ListField(child=EnsembleField(), required=False, min_length=1, max_length=2)
    n_values = serializers.ListField(child=serializers.IntegerField(min_value=2), min_length=1)
    trials = serializers.IntegerField(min_value=1)
    master_seed = serializers.IntegerField(min_value=0, max_value=2 ** 64 - 1)
    master_seed_b = serializers.IntegerField(required=False, allow_null=True, min_value=0, max_value=2 ** 64 - 1)
    statistic = StatisticSerializer()
    thresholds = serializers.DictField(required=False, default=dict)
    record_timings = serializers.BooleanField(required=False, default=False)

    def validate(self, attrs):
        if 'ensembles' not in attrs and 'ensemble' not in attrs:
            raise serializers.ValidationError('Provide "ensemble" or "ensembles".')
        ensembles = attrs.pop('ensembles', None) or [attrs.pop('ensemble')]
        attrs.pop('ensemble', None)
        statistic = attrs['statistic']
        try:
            config = ExperimentConfig(
                name=attrs.get('name') or statistic['kind'],
                ensembles=tuple(ensembles),
                n_values=tuple(attrs['n_values']),
                trials=attrs['trials'],
                master_seed=attrs['master_seed'],
                statistic=statistic['kind'],
                params={key: value for key, value in statistic.items() if key != 'kind'},
                thresholds=dict(attrs.get('thresholds') or {}),
                master_seed_b=attrs.get('master_seed_b'),
                record_timings=attrs.get('record_timings', False),
            )
        except LabError as exc:
            raise serializers.ValidationError({'config': exc.message, **exc.details})
        return {'config': config}


class SpectrumRequestSerializer(serializers.Serializer):
    """Single-matrix diagnostics request."""
    ensemble = EnsembleField(default='gue')
    n = serializers.IntegerField(min_value=2, max_value=400)
    seed = serializers.IntegerField(min_value=0, max_value=2 ** 64 - 1, default=0)
    view = serializers.ChoiceField(choices=['W', 'A', 'M'], default='W')
