from fastapi import APIRouter, HTTPException, status

from dischargekit.context_builder import build_context, gold_target, render_prompt
from dischargekit.errors import DischargeKitError
from dischargekit.models import ContextRequest, ContextResponse, CorpusRecord
from dischargekit.note_parser import parse_record

router = APIRouter(prefix="/contexts", tags=["contexts"])

@router.post("", response_model=ContextResponse)
async def create_context(request: ContextRequest):
    """Build the generation context and inference prompt for one note"""
    try:
        note = parse_record(CorpusRecord(
            note_id=request.note_id,
            text=request.text,
            radiology_reports=request.radiology_reports,
        ))
        context = build_context(note, request.target, request.variant)
        return ContextResponse(
            **context.model_dump(),
            prompt=render_prompt(context),
            reference=gold_target(note, request.target),
        )
    except DischargeKitError as e:
        raise HTTPException(
            status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
            detail=str(e)
        )
    except Exception as e:
        raise HTTPException(
            status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
            detail=f"Failed to build context: {str(e)}"
        )
