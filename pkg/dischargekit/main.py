# Discharge Summary Toolkit HTTP service
import logging
from contextlib import asynccontextmanager

import uvicorn
from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from dischargekit.config import settings
from dischargekit.routers import contexts, metrics, notes

log = logging.getLogger(__name__)


@asynccontextmanager
async def lifespan(app: FastAPI):
    # Startup
    log.info("%s %s starting", settings.app_name, settings.app_version)
    yield
    # Shutdown
    log.info("%s stopped", settings.app_name)

# Create FastAPI app
app = FastAPI(
    title=settings.app_name,
    version=settings.app_version,
    description="Discharge note parsing, context building and summary evaluation",
    lifespan=lifespan
)

# Add CORS middleware
app.add_middleware(
    CORSMiddleware,
    allow_origins=settings.allowed_origins,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# Include routers
app.include_router(notes.router, prefix="/api")
app.include_router(contexts.router, prefix="/api")
app.include_router(metrics.router, prefix="/api")

# Health check endpoint
@app.get("/")
async def root():
    return {
        "message": "Discharge Summary Toolkit API",
        "version": settings.app_version,
        "status": "healthy"
    }

@app.get("/health")
async def health_check():
    return {"status": "healthy", "version": settings.app_version}

# Error handlers
@app.exception_handler(404)
async def not_found_handler(request, exc):
    return JSONResponse(
        status_code=404,
        content={"detail": "Resource not found"}
    )

if __name__ == "__main__":
    uvicorn.run(
        "dischargekit.main:app",
        host="0.0.0.0",
        port=8000,
        reload=settings.debug
    )
