from rest_framework import serializers

from .cadgmm_model import PRESETS
from .models import ExperimentRun, SeedResult


class CommaListField(serializers.ListField):
    """
    List field that also accepts the ``a, b, c`` form used in INI files
    """
    def to_internal_value(self, data):
        if isinstance(data, str):
            data = [item.strip() for item in data.split(',') if item.strip()]
        return super().to_internal_value(data)


class StrictSerializer(serializers.Serializer):
    """
    Rejects keys the serializer does not declare
    """
    def validate(self, attrs):
        unknown = sorted(set(self.initial_data) - set(self.fields))
        if unknown:
            raise serializers.ValidationError({key: "Unknown key" for key in unknown})
        return attrs


# ==================== DATASET RECIPES ====================

class RecipeSerializer(StrictSerializer):
    name = serializers.CharField()
    sources = CommaListField(child=serializers.CharField(), min_length=1)
    label_column = serializers.IntegerField()
    anomaly_labels = CommaListField(child=serializers.CharField(), min_length=1)
    categorical_columns = CommaListField(child=serializers.IntegerField(), required=False)
    drop_columns = CommaListField(child=serializers.IntegerField(), required=False)
    expected_features = serializers.IntegerField(min_value=1, required=False)
    delimiter = serializers.CharField(required=False, trim_whitespace=False)
    header = serializers.BooleanField(required=False)
    missing_marker = serializers.CharField(required=False)

    def validate_delimiter(self, value):
        if value != "whitespace" and len(value) != 1:
            raise serializers.ValidationError("Use a single character or 'whitespace'")
        return value

    def validate(self, attrs):
        attrs = super().validate(attrs)
        overlap = set(attrs.get("categorical_columns", ())) & set(attrs.get("drop_columns", ()))
        if overlap:
            raise serializers.ValidationError({"drop_columns": f"Columns also marked categorical: {sorted(overlap)}"})
        if attrs["label_column"] in attrs.get("drop_columns", ()):
            raise serializers.ValidationError({"drop_columns": "The label column cannot be dropped"})
        return attrs


# ==================== RUN CONFIG SECTIONS ====================

class DatasetSectionSerializer(StrictSerializer):
    cache = serializers.CharField()
    recipe = serializers.CharField(required=False)
    split_seed = serializers.IntegerField(min_value=0, default=0)


class ModelSectionSerializer(StrictSerializer):
    """
    Network architecture. ``preset`` fills every size from a shipped
    architecture; explicit keys override it.
    """
    preset = serializers.ChoiceField(choices=sorted(PRESETS), required=False)
    input_dim = serializers.IntegerField(min_value=1, required=False)
    encoder_dims = CommaListField(child=serializers.IntegerField(min_value=1), min_length=1, required=False)
    graph_dim = serializers.IntegerField(min_value=1, required=False)
    latent_dim = serializers.IntegerField(min_value=1, required=False)
    decoder_dims = CommaListField(child=serializers.IntegerField(min_value=1), required=False)
    estimator_dims = CommaListField(child=serializers.IntegerField(min_value=1), required=False)
    n_components = serializers.IntegerField(min_value=1, required=False)
    k = serializers.IntegerField(min_value=1, required=False)
    epsilon = serializers.FloatField(min_value=0, default=1e-6)
    linear_output = serializers.BooleanField(default=False)
    ablate_graph = serializers.BooleanField(default=False)

    SIZE_FIELDS = (
        "input_dim", "encoder_dims", "graph_dim", "latent_dim",
        "decoder_dims", "estimator_dims", "n_components", "k",
    )

    def validate(self, attrs):
        attrs = super().validate(attrs)
        preset = attrs.pop("preset", None)
        merged = {**PRESETS[preset], **attrs} if preset else dict(attrs)
        missing = [name for name in self.SIZE_FIELDS if name not in merged]
        if missing:
            raise serializers.ValidationError({name: "Required without a preset" for name in missing})
        if merged["epsilon"] <= 0:
            raise serializers.ValidationError({"epsilon": "Must be positive"})
        if list(merged["encoder_dims"])[-1] != merged["graph_dim"]:
            raise serializers.ValidationError({
                "encoder_dims": "Last feature encoder width must equal graph_dim"
            })
        return merged


class TrainSectionSerializer(StrictSerializer):
    iterations = serializers.IntegerField(min_value=1, default=300)
    batch_size = serializers.IntegerField(min_value=2, default=1024)
    learning_rate = serializers.FloatField(min_value=0, default=1e-4)
    seed = serializers.IntegerField(min_value=0, default=0)
    checkpoint_every = serializers.IntegerField(min_value=0, default=0)
    beta1 = serializers.FloatField(min_value=0, max_value=0.999999, default=0.9)
    beta2 = serializers.FloatField(min_value=0, max_value=0.999999, default=0.999)
    adam_epsilon = serializers.FloatField(min_value=0, default=1e-8)


class LossSectionSerializer(StrictSerializer):
    energy = serializers.FloatField(min_value=0, default=0.1)
    covariance = serializers.FloatField(min_value=0, default=0.005)
    embedding = serializers.FloatField(min_value=0, default=0.0)


class EvalSectionSerializer(StrictSerializer):
    batch_size = serializers.IntegerField(min_value=2, required=False)
    threshold_ratio = serializers.FloatField(required=False)
    threshold_energy = serializers.FloatField(required=False)
    seeds = CommaListField(child=serializers.IntegerField(min_value=0), min_length=1, default=[0])
    export_sample = serializers.IntegerField(min_value=1, required=False)
    noise_seed = serializers.IntegerField(min_value=0, default=0)

    def validate_threshold_ratio(self, value):
        if not 0.0 < value < 1.0:
            raise serializers.ValidationError("Must be strictly between 0 and 1")
        return value

    def validate(self, attrs):
        attrs = super().validate(attrs)
        if "threshold_ratio" in attrs and "threshold_energy" in attrs:
            raise serializers.ValidationError("Set threshold_ratio or threshold_energy, not both")
        return attrs


class OutputSectionSerializer(StrictSerializer):
    dir = serializers.CharField()


SECTION_SERIALIZERS = {
    "dataset": DatasetSectionSerializer,
    "model": ModelSectionSerializer,
    "train": TrainSectionSerializer,
    "loss": LossSectionSerializer,
    "eval": EvalSectionSerializer,
    "output": OutputSectionSerializer,
}


# ==================== API ====================

class SeedResultSerializer(serializers.ModelSerializer):
    class Meta:
        model = SeedResult
        fields = [
            'id',
            'seed',
            'status',
            'precision',
            'recall',
            'f1',
            'threshold',
            'error',
        ]
        read_only_fields = fields


class ExperimentRunSerializer(serializers.ModelSerializer):
    """
    Full serializer for ExperimentRun - used for detail views
    """
    seed_results = SeedResultSerializer(many=True, read_only=True)

    class Meta:
        model = ExperimentRun
        fields = [
            'id',
            'dataset',
            'kind',
            'setting',
            'config_fingerprint',
            'effective_config',
            'precision',
            'recall',
            'f1',
            'status',
            'seed_results',
            'created_at',
            'updated_at',
        ]
        read_only_fields = fields


class ExperimentRunListSerializer(serializers.ModelSerializer):
    """
    Lightweight serializer for list views
    """
    n_seeds = serializers.IntegerField(source='n_results', read_only=True)

    class Meta:
        model = ExperimentRun
        fields = [
            'id',
            'dataset',
            'kind',
            'setting',
            'f1',
            'status',
            'n_seeds',
            'updated_at',
        ]
