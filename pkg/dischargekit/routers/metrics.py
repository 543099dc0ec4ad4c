from fastapi import APIRouter, HTTPException, status

from dischargekit.errors import DischargeKitError
from dischargekit.eval_metrics import lexical_metric, report_from_percent
from dischargekit.models import AggregateRequest, MetricReport, MetricValue, ScoreRequest

router = APIRouter(prefix="/metrics", tags=["metrics"])

@router.post("/score", response_model=MetricValue)
async def score(request: ScoreRequest):
    """Score one hypothesis against its reference with a lexical metric"""
    try:
        return lexical_metric(request.metric, request.hypothesis, request.reference)
    except DischargeKitError as e:
        raise HTTPException(
            status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
            detail=str(e)
        )
    except Exception as e:
        raise HTTPException(
            status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
            detail=f"Failed to score: {str(e)}"
        )

@router.post("/aggregate", response_model=MetricReport)
async def aggregate(request: AggregateRequest):
    """Aggregate percent-scale metric rows into a leaderboard report"""
    try:
        return report_from_percent(
            combined=request.combined,
            bhc=request.bhc,
            di=request.di,
            label=request.label,
        )
    except DischargeKitError as e:
        raise HTTPException(
            status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
            detail=str(e)
        )
    except Exception as e:
        raise HTTPException(
            status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
            detail=f"Failed to aggregate: {str(e)}"
        )
