"""
Event system for ctptmed.

Provides the event handler registry, registration decorator, and fire_event function.
Long-running work (chains, replications, experiments) announces progress through
it; the command-line surface subscribes progress bars.
"""

import logging
from collections.abc import Callable
from typing import Any, TypeAlias

from datatypes import Event

EventHandler: TypeAlias = Callable[..., None]

EVENT_HANDLERS: dict[Event, list[EventHandler]] = {}

logger: logging.Logger = logging.getLogger(__name__)


def register_event_handler(
    origin: str,
    event: Event,
) -> Callable[[EventHandler], EventHandler]:
    """
    Decorator to register a function as an event handler.

    Multiple handlers can be registered for the same event; they run in
    registration order.

    Args:
        origin: Name of the component registering the handler (for logging).
        event: The `Event` enum member representing the event to listen for.

    Returns:
        The decorator function.
    """
    def decorator(func: EventHandler) -> EventHandler:
        logger.debug(
            f"Registering event handler for '{event}' from '{origin}'")
        EVENT_HANDLERS.setdefault(event, []).append(func)
        return func

    return decorator


def unregister_event_handler(event: Event, func: EventHandler) -> None:
    handlers: list[EventHandler] = EVENT_HANDLERS.get(event, [])
    if func in handlers:
        handlers.remove(func)


def fire_event(event: Event, *args: Any, **kwargs: Any) -> None:
    """Fires an event and runs all registered handlers; handler errors are logged, not raised."""
    logger.debug(f"Firing event: {event}")
    for handler in list(EVENT_HANDLERS.get(event, [])):
        try:
            handler(*args, **kwargs)
        except Exception:
            logger.exception(f"Error in event handler for {event}")
