"""Template library: registry construction and instancing entry points."""
from .base import (ConceptInstance, ConceptTemplateDef, ConstraintViolationError,
                   DiscreteParamSpec, ExpandedConcept, FrameSpec,
                   GeometryTemplateDef, LeafMember, MemberPlacement,
                   ParamJacobian, ParamSpec, RegionSpec, TemplateRegistry,
                   TemplateRegistrationError, UnknownTemplateError,
                   instantiate_concept, instantiate_geometry,
                   instantiate_with_jacobian)
from .concepts import concept_templates
from .primitives import geometry_templates


def builtin_registry() -> TemplateRegistry:
    """Registry with the ten geometry templates and the built-in concepts."""
    reg = TemplateRegistry()
    for d in geometry_templates():
        reg.register(d)
    for d in concept_templates():
        reg.register(d)
    return reg


__all__ = [
    "ConceptInstance", "ConceptTemplateDef", "ConstraintViolationError",
    "DiscreteParamSpec", "ExpandedConcept", "FrameSpec", "GeometryTemplateDef",
    "LeafMember", "MemberPlacement", "ParamJacobian", "ParamSpec", "RegionSpec",
    "TemplateRegistry", "TemplateRegistrationError", "UnknownTemplateError",
    "builtin_registry", "concept_templates", "geometry_templates",
    "instantiate_concept", "instantiate_geometry", "instantiate_with_jacobian",
]
