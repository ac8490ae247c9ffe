import logging

from django.conf import settings
from rest_framework import status
from rest_framework.decorators import api_view
from rest_framework.response import Response

from . import eigensolve, local_stats, spectral
from .ensembles import BUILTIN_NAMES, builtin_ensemble, match_report, resolve_ensemble, sample_matrix
from .exceptions import ConfigurationError, LabError
from .harness import execute
from .serializers import ExperimentConfigSerializer, SpectrumRequestSerializer

logger = logging.getLogger(__name__)

IDENTITY_Z = complex(0.3, 0.5)


def _lab_error_response(exc: LabError) -> Response:
    code = status.HTTP_400_BAD_REQUEST if isinstance(exc, ConfigurationError) else status.HTTP_422_UNPROCESSABLE_ENTITY
    return Response({'error': exc.message, 'code': exc.code, 'details': exc.details}, status=code)


@api_view(['GET'])
def list_ensembles(request):
    """
    List the builtin ensembles with their JSON documents and their match
    orders against gue and goe.
    """
    try:
        references = {name: builtin_ensemble(name) for name in ('gue', 'goe')}
        ensembles = []
        for name in BUILTIN_NAMES:
            spec = builtin_ensemble(name)
            ensembles.append({
                'name': name,
                'spec': spec.to_dict(),
                'continuous': spec.is_continuous,
                'match': {ref: match_report(spec, other) for ref, other in references.items()},
            })
        return Response({'ensembles': ensembles, 'total': len(ensembles)}, status=status.HTTP_200_OK)
    except LabError as e:
        return _lab_error_response(e)
    except Exception as e:
        logger.exception('listing ensembles failed')
        return Response(
            {'error': f'An error occurred while listing ensembles: {str(e)}'},
            status=status.HTTP_500_INTERNAL_SERVER_ERROR
        )


@api_view(['POST'])
def spectrum(request):
    """
    Sample one matrix and report its spectral diagnostics.

    Expected input:
    {
        "ensemble": "gue",      // builtin name or ensemble document
        "n": 50,                // 2..400
        "seed": 7,
        "view": "W"             // W, A or M scale for the eigenvalues
    }
    """
    try:
        serializer = SpectrumRequestSerializer(data=request.data)
        if not serializer.is_valid():
            return Response(
                {'error': 'Invalid spectrum request', 'details': serializer.errors},
                status=status.HTTP_400_BAD_REQUEST
            )
        data = serializer.validated_data
        spec = resolve_ensemble(data['ensemble'])
        matrix = sample_matrix(spec, data['n'], data['seed'])
        W = matrix.W
        decomp = eigensolve.eigen_full(matrix.view(data['view']))
        report = local_stats.interlacing_check(W)

        identities = {}
        for name, check in (
            ('schur', lambda: spectral.schur_identity_residual(W, IDENTITY_Z)),
            ('interlacing', lambda: local_stats.interlacing_identity_residual(W)),
            ('first_coordinate', lambda: local_stats.first_coordinate_residual(W, matrix.n)),
        ):
            try:
                identities[name] = check()
            except LabError as e:
                identities[name] = {'error': e.message, 'code': e.code}

        return Response({
            'provenance': matrix.provenance,
            'view': data['view'],
            'eigenvalues': decomp.eigenvalues.tolist(),
            'residual': decomp.residual,
            'gram_error': decomp.gram_error,
            'delocalization_sup': local_stats.delocalization_sup(decomp),
            'interlacing': report.to_dict(),
            'identities': identities,
        }, status=status.HTTP_200_OK)

    except LabError as e:
        return _lab_error_response(e)
    except Exception as e:
        logger.exception('spectrum request failed')
        return Response(
            {'error': f'An error occurred while computing the spectrum: {str(e)}'},
            status=status.HTTP_500_INTERNAL_SERVER_ERROR
        )


@api_view(['POST'])
def run_experiment(request):
    """
    Run an experiment config and return its summary with threshold checks.

    Work per request is capped by LABORATORY['MAX_REQUEST_WORK'] (trials x n
    summed over ensembles); larger runs belong on the command line.
    """
    try:
        serializer = ExperimentConfigSerializer(data=request.data)
        if not serializer.is_valid():
            return Response(
                {'error': 'Invalid experiment config', 'details': serializer.errors},
                status=status.HTTP_400_BAD_REQUEST
            )
        config = serializer.validated_data['config']
        work = config.trials * sum(config.n_values) * len(config.ensembles)
        limit = settings.LABORATORY['MAX_REQUEST_WORK']
        if work > limit:
            return Response(
                {
                    'error': 'Experiment too large for a request; use "manage.py rmt run".',
                    'details': {'work': work, 'limit': limit},
                },
                status=status.HTTP_400_BAD_REQUEST
            )
        outcome = execute(config, threads=1)
        return Response(outcome.summary, status=status.HTTP_200_OK)

    except LabError as e:
        return _lab_error_response(e)
    except Exception as e:
        logger.exception('experiment request failed')
        return Response(
            {'error': f'An error occurred while running the experiment: {str(e)}'},
            status=status.HTTP_500_INTERNAL_SERVER_ERROR
        )
