from fastapi import APIRouter, HTTPException, status

from dischargekit.errors import DischargeKitError
from dischargekit.models import ParsedNote, ParseNoteRequest
from dischargekit.note_parser import parse_note

router = APIRouter(prefix="/notes", tags=["notes"])

@router.post("/parse", response_model=ParsedNote)
async def parse(request: ParseNoteRequest):
    """Segment a discharge note into sections"""
    try:
        return parse_note(request.note_id, request.text)
    except DischargeKitError as e:
        raise HTTPException(
            status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
            detail=str(e)
        )
    except Exception as e:
        raise HTTPException(
            status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
            detail=f"Failed to parse note: {str(e)}"
        )
